#include "mtmil/synthgen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "mtmil/parallel.hpp"
#include "mtmil/rng.hpp"

namespace mtmil {

namespace {

// Stream purpose tags; part of the on-disk determinism contract.
enum Purpose : std::uint64_t {
  kDirections = 1,
  kExternalPick = 2,
  kLabels = 3,
  kMeta = 4,
  kTiles = 5,
};

constexpr int kRejectionCap = 10000;

using Vec = Eigen::VectorXd;

Vec random_unit(Rng& rng, std::int64_t dim) {
  Vec v(dim);
  for (std::int64_t i = 0; i < dim; ++i) v[i] = rng.normal();
  const double norm = v.norm();
  return norm > 0 ? Vec(v / norm) : v;
}

// Unit vector with |cos| <= 0.3 against every vector already accepted.
Vec reject_direction(Rng& rng, std::int64_t dim,
                     const std::vector<Vec>& accepted) {
  for (int attempt = 0; attempt < kRejectionCap; ++attempt) {
    Vec candidate = random_unit(rng, dim);
    bool ok = true;
    for (const auto& prev : accepted)
      if (std::abs(candidate.dot(prev)) > 0.3) {
        ok = false;
        break;
      }
    if (ok) return candidate;
  }
  throw Error(ErrorCode::GenerationError,
              "direction rejection sampling failed after 10000 tries");
}

std::string format_bag_id(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "bag_%06lld",
                static_cast<long long>(index));
  return buf;
}

std::string format_date(std::int64_t day_offset) {
  using namespace std::chrono;
  const auto date = year_month_day(sys_days(year(2018) / 1 / 1) +
                                   days(day_offset));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(date.year()),
                unsigned(date.month()), unsigned(date.day()));
  return buf;
}

struct CohortDirections {
  std::vector<Vec> programs;
  Vec grade_dir;
  Vec site_dir;
  std::vector<Vec> class_offsets;  // classes 1..5
  Vec stain_shift;
};

CohortDirections draw_directions(const SynthConfig& cfg) {
  Rng rng(cfg.seed, kDirections);
  CohortDirections dirs;
  std::vector<Vec> accepted;
  for (std::int64_t p = 0; p < cfg.n_programs; ++p) {
    dirs.programs.push_back(reject_direction(rng, cfg.dim, accepted));
    accepted.push_back(dirs.programs.back());
  }
  dirs.grade_dir = reject_direction(rng, cfg.dim, accepted);
  accepted.push_back(dirs.grade_dir);
  dirs.site_dir = reject_direction(rng, cfg.dim, accepted);
  accepted.push_back(dirs.site_dir);
  // Class offsets and the stain shift are plain random directions; only the
  // signal directions above carry the near-orthogonality constraint.
  const std::vector<Vec> unconstrained;
  for (int c = 1; c < kNumTileClasses; ++c)
    dirs.class_offsets.push_back(
        cfg.signal_amplitude * reject_direction(rng, cfg.dim, unconstrained));
  dirs.stain_shift = cfg.stain_shift_magnitude *
                     reject_direction(rng, cfg.dim, unconstrained);
  return dirs;
}

std::vector<bool> draw_activations(const SynthConfig& cfg,
                                   std::int64_t bag_index) {
  Rng rng(cfg.seed, kLabels, static_cast<std::uint64_t>(bag_index));
  std::vector<bool> z(cfg.n_programs);
  for (std::int64_t p = 0; p < cfg.n_programs; ++p)
    z[p] = rng.bernoulli(cfg.program_activity[p]);
  return z;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_bags < 0) throw Error(ErrorCode::ConfigError, "n_bags < 0");
  if (dim < 1) throw Error(ErrorCode::ConfigError, "dim < 1");
  if (tiles_min < 2 || tiles_min > tiles_max)
    throw Error(ErrorCode::ConfigError,
                "need 2 <= tiles_min <= tiles_max");
  if (label_noise < 0.0 || label_noise >= 0.5)
    throw Error(ErrorCode::ConfigError, "label_noise outside [0, 0.5)");
  if (tumor_fraction_mean <= 0.0 || tumor_fraction_mean >= 1.0)
    throw Error(ErrorCode::ConfigError, "tumor_fraction_mean outside (0,1)");
  if (signal_amplitude <= 0.0)
    throw Error(ErrorCode::ConfigError, "signal_amplitude must be positive");
  if (noise_sigma <= 0.0)
    throw Error(ErrorCode::ConfigError, "noise_sigma must be positive");
  if (external_fraction < 0.0 || external_fraction >= 1.0)
    throw Error(ErrorCode::ConfigError, "external_fraction outside [0,1)");
  if (stain_shift_magnitude < 0.0)
    throw Error(ErrorCode::ConfigError, "stain_shift_magnitude < 0");
  if (static_cast<std::int64_t>(program_activity.size()) != n_programs)
    throw Error(ErrorCode::ConfigError,
                "program_activity size must equal n_programs");
  for (const double q : program_activity)
    if (q <= 0.0 || q >= 1.0)
      throw Error(ErrorCode::ConfigError, "program_activity outside (0,1)");
  if (targets.empty())
    throw Error(ErrorCode::ConfigError, "at least one target required");
  for (const auto& t : targets) {
    if (t.programs.empty())
      throw Error(ErrorCode::ConfigError,
                  "target " + t.target_id + " references no program");
    for (const int p : t.programs)
      if (p < 0 || p >= n_programs)
        throw Error(ErrorCode::ConfigError,
                    "target " + t.target_id + " references bad program index");
  }
}

std::vector<std::string> SynthConfig::config_keys() {
  return {"seed",          "n_bags",        "dim",
          "targets",       "n_programs",    "program_activity",
          "label_noise",   "tiles_min",     "tiles_max",
          "tumor_fraction_mean", "signal_amplitude", "noise_sigma",
          "external_fraction",   "stain_shift_magnitude",
          "grade_effect",  "site_effect"};
}

SynthConfig SynthConfig::from_keyval(const KeyValueFile& kv) {
  SynthConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(kv.integer("seed", 42));
  cfg.n_bags = kv.integer("n_bags", cfg.n_bags);
  cfg.dim = kv.integer("dim", cfg.dim);
  cfg.n_programs = kv.integer("n_programs", cfg.n_programs);
  cfg.program_activity = kv.numbers("program_activity");
  cfg.label_noise = kv.number("label_noise", cfg.label_noise);
  cfg.tiles_min = kv.integer("tiles_min", cfg.tiles_min);
  cfg.tiles_max = kv.integer("tiles_max", cfg.tiles_max);
  cfg.tumor_fraction_mean =
      kv.number("tumor_fraction_mean", cfg.tumor_fraction_mean);
  cfg.signal_amplitude = kv.number("signal_amplitude", cfg.signal_amplitude);
  cfg.noise_sigma = kv.number("noise_sigma", cfg.noise_sigma);
  cfg.external_fraction = kv.number("external_fraction", cfg.external_fraction);
  cfg.stain_shift_magnitude =
      kv.number("stain_shift_magnitude", cfg.stain_shift_magnitude);
  cfg.grade_effect = kv.number("grade_effect", cfg.grade_effect);
  cfg.site_effect = kv.number("site_effect", cfg.site_effect);
  // Targets encoded as "id:p0;p1;...".
  for (const auto& spec : kv.strings("targets")) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos)
      throw Error(ErrorCode::ConfigError, "target spec missing ':': " + spec);
    SynthTarget target;
    target.target_id = spec.substr(0, colon);
    std::string rest = spec.substr(colon + 1);
    std::size_t pos = 0;
    while (pos < rest.size()) {
      const auto next = rest.find(';', pos);
      const auto item = rest.substr(pos, next == std::string::npos
                                             ? std::string::npos
                                             : next - pos);
      try {
        target.programs.push_back(std::stoi(item));
      } catch (...) {
        throw Error(ErrorCode::ConfigError, "bad program index in " + spec);
      }
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    cfg.targets.push_back(std::move(target));
  }
  return cfg;
}

std::pair<std::vector<FeatureBag>, CohortManifest> generate_cohort(
    const SynthConfig& cfg) {
  cfg.validate();
  CohortManifest manifest;
  for (const auto& t : cfg.targets) manifest.target_ids.push_back(t.target_id);
  std::vector<FeatureBag> bags(static_cast<std::size_t>(cfg.n_bags));
  manifest.rows.resize(static_cast<std::size_t>(cfg.n_bags));
  if (cfg.n_bags == 0) return {std::move(bags), std::move(manifest)};

  const auto dirs = draw_directions(cfg);

  // External bags: a fixed-size subset chosen by a dedicated stream.
  const auto n_external = static_cast<std::int64_t>(
      std::llround(cfg.external_fraction * double(cfg.n_bags)));
  std::vector<bool> is_external(static_cast<std::size_t>(cfg.n_bags), false);
  {
    Rng rng(cfg.seed, kExternalPick);
    const auto perm = rng.permutation(static_cast<std::uint32_t>(cfg.n_bags));
    for (std::int64_t i = 0; i < n_external; ++i) is_external[perm[i]] = true;
  }

  parallel_for(static_cast<std::size_t>(cfg.n_bags), [&](std::size_t i) {
    const auto bag_index = static_cast<std::int64_t>(i);
    const auto z = draw_activations(cfg, bag_index);
    Rng labels_rng(cfg.seed, kLabels, i);
    // Keep the label stream aligned with draw_activations, which consumed
    // one draw per program.
    for (std::int64_t p = 0; p < cfg.n_programs; ++p) labels_rng.next_u64();

    ManifestRow row;
    row.bag_id = format_bag_id(bag_index);
    row.cohort_id = "synthetic";
    for (const auto& t : cfg.targets) {
      bool y = false;
      for (const int p : t.programs) y = y || z[p];
      if (labels_rng.bernoulli(cfg.label_noise)) y = !y;
      row.labels.push_back(y ? 1 : 0);
    }

    Rng meta(cfg.seed, kMeta, i);
    const bool grade_high = meta.bernoulli(0.5);
    const bool primary = meta.bernoulli(0.5);
    const auto n_tiles = static_cast<std::int64_t>(
        cfg.tiles_min + static_cast<std::int64_t>(meta.uniform_index(
                            cfg.tiles_max - cfg.tiles_min + 1)));
    const double concentration = 10.0;
    const double tumor_frac =
        meta.beta(concentration * cfg.tumor_fraction_mean,
                  concentration * (1.0 - cfg.tumor_fraction_mean));
    const auto day = static_cast<std::int64_t>(meta.uniform_index(4 * 365));
    row.timestamp = format_date(day);
    row.scanner = meta.bernoulli(0.5) ? "scanner_a" : "scanner_b";
    row.tissue_site = meta.bernoulli(0.5) ? "site_colon" : "site_rectum";
    row.procedure = meta.bernoulli(0.5) ? "biopsy" : "resection";
    row.grade_high = grade_high;
    row.is_primary_site = primary;
    row.stain_origin =
        is_external[i] ? StainOrigin::kExternal : StainOrigin::kInternal;

    // Tile composition and features.
    Rng tiles(cfg.seed, kTiles, i);
    const auto n_tumor = std::min<std::int64_t>(
        n_tiles, std::llround(tumor_frac * double(n_tiles)));
    std::vector<std::uint8_t> classes(static_cast<std::size_t>(n_tiles));
    for (std::int64_t k = 0; k < n_tiles; ++k)
      classes[k] = k < n_tumor
                       ? kTumor
                       : static_cast<std::uint8_t>(
                             1 + tiles.uniform_index(kNumTileClasses - 1));
    const auto order = tiles.permutation(static_cast<std::uint32_t>(n_tiles));
    std::vector<std::uint8_t> shuffled(classes.size());
    for (std::int64_t k = 0; k < n_tiles; ++k) shuffled[k] = classes[order[k]];

    Vec signal = Vec::Zero(cfg.dim);
    for (std::int64_t p = 0; p < cfg.n_programs; ++p)
      if (z[p]) signal += dirs.programs[p];
    const double signal_norm = signal.norm();
    if (signal_norm > 0) signal /= signal_norm;
    Vec tumor_mean = cfg.signal_amplitude * signal;
    if (grade_high) tumor_mean += cfg.grade_effect * dirs.grade_dir;
    if (primary) tumor_mean += cfg.site_effect * dirs.site_dir;

    FeatureBag bag;
    bag.bag_id = row.bag_id;
    bag.features.resize(n_tiles, cfg.dim);
    std::vector<std::uint32_t> coords(2 * static_cast<std::size_t>(n_tiles));
    std::vector<std::uint8_t> tumor_label(static_cast<std::size_t>(n_tiles));
    const auto grid_w = static_cast<std::uint32_t>(
        std::ceil(std::sqrt(double(n_tiles))));
    for (std::int64_t k = 0; k < n_tiles; ++k) {
      const auto cls = shuffled[k];
      const Vec& mean =
          cls == kTumor ? tumor_mean : dirs.class_offsets[cls - 1];
      for (std::int64_t j = 0; j < cfg.dim; ++j) {
        double v = mean[j] + cfg.noise_sigma * tiles.normal();
        if (is_external[i]) v += dirs.stain_shift[j];
        bag.features(k, j) = static_cast<float>(v);
      }
      coords[2 * k] = static_cast<std::uint32_t>(k) % grid_w;
      coords[2 * k + 1] = static_cast<std::uint32_t>(k) / grid_w;
      tumor_label[k] = cls == kTumor ? 1 : 0;
    }
    bag.tile_coords = std::move(coords);
    bag.tile_class = std::move(shuffled);
    bag.tile_tumor_label = std::move(tumor_label);
    bags[i] = std::move(bag);
    manifest.rows[i] = std::move(row);
  });

  manifest.validate();
  return {std::move(bags), std::move(manifest)};
}

std::vector<PlantedBagTruth> planted_truth(
    const std::vector<FeatureBag>& bags) {
  std::vector<PlantedBagTruth> out;
  out.reserve(bags.size());
  for (const auto& bag : bags) {
    if (!bag.tile_class || !bag.tile_tumor_label)
      throw Error(ErrorCode::MissingTruth,
                  "bag " + bag.bag_id + " lacks planted metadata");
    PlantedBagTruth truth;
    truth.bag_id = bag.bag_id;
    truth.tile_class = *bag.tile_class;
    truth.tumor_flag = *bag.tile_tumor_label;
    out.push_back(std::move(truth));
  }
  return out;
}

std::vector<bool> planted_programs(const SynthConfig& config,
                                   std::int64_t bag_index) {
  if (bag_index < 0 || bag_index >= config.n_bags)
    throw Error(ErrorCode::MissingTruth, "bag index outside cohort");
  return draw_activations(config, bag_index);
}

std::int64_t bag_index_from_id(const std::string& bag_id) {
  if (bag_id.rfind("bag_", 0) != 0)
    throw Error(ErrorCode::MissingTruth, "not a generated bag_id: " + bag_id);
  try {
    return std::stoll(bag_id.substr(4));
  } catch (...) {
    throw Error(ErrorCode::MissingTruth, "not a generated bag_id: " + bag_id);
  }
}

}  // namespace mtmil
