#include <cmath>
#include <set>

#include "doctest.h"
#include "mtmil/synthgen.hpp"

using namespace mtmil;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.seed = 21;
  cfg.n_bags = 60;
  cfg.dim = 12;
  cfg.n_programs = 2;
  cfg.program_activity = {0.3, 0.5};
  cfg.targets = {{"a", {0}}, {"b", {0, 1}}};
  cfg.tiles_min = 5;
  cfg.tiles_max = 9;
  cfg.external_fraction = 0.2;
  cfg.stain_shift_magnitude = 0.4;
  return cfg;
}

}  // namespace

TEST_CASE("generation is deterministic down to the serialized bytes") {
  const auto cfg = small_config();
  auto [bags_a, manifest_a] = generate_cohort(cfg);
  auto [bags_b, manifest_b] = generate_cohort(cfg);
  CHECK(manifest_to_csv(manifest_a) == manifest_to_csv(manifest_b));
  REQUIRE(bags_a.size() == bags_b.size());
  for (std::size_t i = 0; i < bags_a.size(); ++i)
    CHECK(serialize_bag(bags_a[i]) == serialize_bag(bags_b[i]));
}

TEST_CASE("cohort shape follows the config") {
  const auto cfg = small_config();
  auto [bags, manifest] = generate_cohort(cfg);
  REQUIRE(std::int64_t(bags.size()) == cfg.n_bags);
  REQUIRE(manifest.rows.size() == bags.size());
  CHECK(manifest.target_ids == std::vector<std::string>{"a", "b"});
  int external = 0;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const auto& bag = bags[i];
    CHECK(bag.dim() == cfg.dim);
    CHECK(bag.n_tiles() >= cfg.tiles_min);
    CHECK(bag.n_tiles() <= cfg.tiles_max);
    REQUIRE(bag.tile_class.has_value());
    REQUIRE(bag.tile_tumor_label.has_value());
    REQUIRE(bag.tile_coords.has_value());
    CHECK(bag.bag_id == manifest.rows[i].bag_id);
    external += manifest.rows[i].stain_origin == StainOrigin::kExternal;
    CHECK_FALSE(manifest.rows[i].timestamp.empty());
  }
  // ceil-style fraction: at least floor, not wildly off
  CHECK(external == std::int64_t(std::ceil(0.2 * 60)));
}

TEST_CASE("single-program prevalence lands in the binomial 99.9% interval") {
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.n_bags = 5000;
  cfg.dim = 4;
  cfg.n_programs = 1;
  cfg.program_activity = {0.1};
  cfg.targets = {{"t", {0}}};
  cfg.tiles_min = 2;
  cfg.tiles_max = 3;
  auto [bags, manifest] = generate_cohort(cfg);
  int positives = 0;
  for (const auto& row : manifest.rows) positives += row.labels[0] == 1;
  // Binomial(5000, 0.1): mean 500, sd ~21.2; +-3.3 sd
  CHECK(positives > 430);
  CHECK(positives < 570);
}

TEST_CASE("labels are the noisy-OR of planted program activations") {
  auto cfg = small_config();
  cfg.label_noise = 0.0;
  auto [bags, manifest] = generate_cohort(cfg);
  for (const auto& row : manifest.rows) {
    const auto z = planted_programs(cfg, bag_index_from_id(row.bag_id));
    REQUIRE(z.size() == 2);
    CHECK(row.labels[0] == std::int8_t(z[0] ? 1 : 0));
    CHECK(row.labels[1] == std::int8_t((z[0] || z[1]) ? 1 : 0));
  }
}

TEST_CASE("shared programs induce label correlation") {
  SynthConfig cfg;
  cfg.seed = 9;
  cfg.n_bags = 4000;
  cfg.dim = 8;
  cfg.n_programs = 3;
  cfg.program_activity = {0.3, 0.3, 0.3};
  cfg.targets = {{"x", {0}}, {"y", {0, 1}}, {"z", {2}}};
  cfg.tiles_min = 2;
  cfg.tiles_max = 3;
  auto [bags, manifest] = generate_cohort(cfg);
  int xy = 0, x = 0, y = 0, z = 0, xz = 0;
  for (const auto& row : manifest.rows) {
    x += row.labels[0] == 1;
    y += row.labels[1] == 1;
    z += row.labels[2] == 1;
    xy += row.labels[0] == 1 && row.labels[1] == 1;
    xz += row.labels[0] == 1 && row.labels[2] == 1;
  }
  const double n = double(cfg.n_bags);
  // x implies y by construction (no noise): P(xy) = P(x) >> P(x)P(y).
  CHECK(xy == x);
  // Independent programs stay near independence.
  CHECK(xz / n == doctest::Approx((x / n) * (z / n)).epsilon(0.15));
}

TEST_CASE("planted tile truth echoes the stored sidecars") {
  auto [bags, manifest] = generate_cohort(small_config());
  const auto truth = planted_truth(bags);
  REQUIRE(truth.size() == bags.size());
  for (std::size_t i = 0; i < bags.size(); ++i) {
    CHECK(truth[i].bag_id == bags[i].bag_id);
    CHECK(truth[i].tile_class == *bags[i].tile_class);
    CHECK(truth[i].tumor_flag == *bags[i].tile_tumor_label);
    for (std::size_t t = 0; t < truth[i].tile_class.size(); ++t)
      CHECK((truth[i].tile_class[t] == kTumor) ==
            (truth[i].tumor_flag[t] == 1));
  }
}

TEST_CASE("tumor fraction concentrates around its configured mean") {
  SynthConfig cfg;
  cfg.seed = 13;
  cfg.n_bags = 800;
  cfg.dim = 4;
  cfg.n_programs = 1;
  cfg.program_activity = {0.5};
  cfg.targets = {{"t", {0}}};
  cfg.tiles_min = 100;
  cfg.tiles_max = 100;
  cfg.tumor_fraction_mean = 0.3;
  auto [bags, manifest] = generate_cohort(cfg);
  double sum = 0;
  for (const auto& bag : bags) {
    int tumor = 0;
    for (const auto v : *bag.tile_tumor_label) tumor += v;
    sum += double(tumor) / double(bag.n_tiles());
  }
  CHECK(sum / double(bags.size()) == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("stain-shifted external bags move the feature mean") {
  auto cfg = small_config();
  cfg.stain_shift_magnitude = 2.0;
  cfg.n_bags = 400;
  auto [bags, manifest] = generate_cohort(cfg);
  Eigen::RowVectorXf internal_mean = Eigen::RowVectorXf::Zero(cfg.dim);
  Eigen::RowVectorXf external_mean = Eigen::RowVectorXf::Zero(cfg.dim);
  double ni = 0, ne = 0;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const auto rows = double(bags[i].features.rows());
    if (manifest.rows[i].stain_origin == StainOrigin::kExternal) {
      external_mean += bags[i].features.colwise().sum();
      ne += rows;
    } else {
      internal_mean += bags[i].features.colwise().sum();
      ni += rows;
    }
  }
  const double gap =
      double((external_mean / ne - internal_mean / ni).norm());
  CHECK(gap > 1.0);  // shift magnitude 2 against unit noise
}

TEST_CASE("config validation rejects degenerate settings") {
  auto cfg = small_config();
  cfg.n_bags = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config();
  cfg.program_activity = {0.3};  // wrong arity
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config();
  cfg.targets[0].programs = {5};  // out of range
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config();
  cfg.targets.clear();
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config();
  cfg.tiles_min = 10;
  cfg.tiles_max = 5;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("impossible direction rejection raises GenerationError") {
  SynthConfig cfg = small_config();
  cfg.dim = 2;  // cannot fit many nearly-orthogonal directions in the plane
  cfg.n_programs = 40;
  cfg.program_activity.assign(40, 0.1);
  cfg.targets = {{"a", {0}}};
  try {
    generate_cohort(cfg);
    FAIL("expected GenerationError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GenerationError);
  }
}

TEST_CASE("bag ids decode back to generation indices") {
  CHECK(bag_index_from_id("bag_000042") == 42);
  CHECK_THROWS_AS(bag_index_from_id("nope"), Error);
}
