#include "mtmil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "mtmil/parallel.hpp"
#include "mtmil/stats.hpp"

namespace mtmil {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream purpose tags for training-time randomness.
enum TrainPurpose : std::uint64_t {
  kInitTag = 0x54494e49ULL,
  kShuffleTag = 0x5346484cULL,
  kTrainSampleTag = 0x54534d50ULL,
  kInferSampleTag = 0x49534d50ULL,
};

struct TargetBinding {
  std::vector<std::string> ids;
  std::vector<int> manifest_index;
  std::vector<std::pair<double, double>> class_weights;
};

std::vector<std::int8_t> bound_labels(const ManifestRow& row,
                                      const TargetBinding& binding) {
  std::vector<std::int8_t> labels;
  labels.reserve(binding.manifest_index.size());
  for (const int idx : binding.manifest_index) labels.push_back(row.labels[idx]);
  return labels;
}

TargetBinding bind_targets(const CohortManifest& manifest,
                           const std::vector<std::string>& targets) {
  TargetBinding binding;
  for (const auto& id : targets) {
    const int idx = manifest.target_index(id);
    if (idx < 0)
      throw Error(ErrorCode::UnknownTarget, "target not in manifest: " + id);
    binding.ids.push_back(id);
    binding.manifest_index.push_back(idx);
  }
  return binding;
}

// Reversed-prevalence class weights from the training bags; targets with a
// single class on the training folds get zero weights and contribute no
// gradient.
void compute_class_weights(TargetBinding& binding,
                           const CohortManifest& manifest,
                           const std::vector<std::string>& train_bags) {
  binding.class_weights.clear();
  for (const int idx : binding.manifest_index) {
    std::int64_t pos = 0, labeled = 0;
    for (const auto& id : train_bags) {
      const auto* row = manifest.find(id);
      if (!row || row->labels[idx] == kLabelNA) continue;
      ++labeled;
      pos += row->labels[idx];
    }
    if (pos == 0 || pos == labeled) {
      binding.class_weights.emplace_back(0.0, 0.0);
    } else {
      binding.class_weights.push_back(
          weights_from_prevalence(double(pos) / double(labeled)));
    }
  }
}

FeatureMatrix take_rows(const FeatureMatrix& tiles,
                        const std::vector<std::uint32_t>& rows) {
  FeatureMatrix out(static_cast<Eigen::Index>(rows.size()), tiles.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = tiles.row(rows[i]);
  return out;
}

// Mean ROC-AUC over targets with both classes present among the given bags.
double selection_score(const ModelParams& params, const BagStore& store,
                       const CohortManifest& manifest,
                       const std::vector<std::string>& bag_ids,
                       const TargetBinding& binding,
                       const TrainConfig& config) {
  const auto n = bag_ids.size();
  Matrix probs(n, binding.ids.size());
  parallel_for(n, [&](std::size_t i) {
    const auto& bag = store.get(bag_ids[i]);
    const auto idx = inference_sample(bag.bag_id, bag.n_tiles(),
                                      config.infer_bag_size, config.seed);
    const auto tiles = take_rows(bag.features, idx);
    const auto result = forward(params, tiles);
    for (std::size_t t = 0; t < binding.ids.size(); ++t)
      probs(i, t) = result.task_probs(static_cast<Eigen::Index>(t), 1);
  });
  double sum = 0.0;
  int evaluable = 0;
  for (std::size_t t = 0; t < binding.ids.size(); ++t) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
      const auto* row = manifest.find(bag_ids[i]);
      const auto y = row->labels[binding.manifest_index[t]];
      if (y == kLabelNA) continue;
      scores.push_back(probs(i, t));
      labels.push_back(y);
    }
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    if (pos == 0 || pos == static_cast<std::int64_t>(labels.size())) continue;
    sum += roc_auc(scores, labels);
    ++evaluable;
  }
  if (evaluable == 0)
    throw Error(ErrorCode::SelectionInfeasible,
                "no target evaluable on the selection fold");
  return sum / evaluable;
}

}  // namespace

ModeSpec ModeSpec::parse(const std::string& text) {
  ModeSpec spec;
  if (text == "multitask") {
    spec.mode = TrainMode::kMultitask;
    return spec;
  }
  if (text.rfind("singletask:", 0) == 0) {
    spec.mode = TrainMode::kSingletask;
    spec.target_id = text.substr(std::string("singletask:").size());
    if (!spec.target_id.empty()) return spec;
  }
  throw Error(ErrorCode::ConfigError,
              "mode must be multitask or singletask:TARGET, got " + text);
}

std::string ModeSpec::to_string() const {
  return mode == TrainMode::kMultitask ? "multitask"
                                       : "singletask:" + target_id;
}

std::vector<std::uint32_t> sample_bag(std::int64_t n_tiles,
                                      std::int64_t bag_size, Rng& rng) {
  if (n_tiles < 1)
    throw Error(ErrorCode::ShapeError, "bag must contain at least one tile");
  if (n_tiles <= bag_size) {
    std::vector<std::uint32_t> all(static_cast<std::size_t>(n_tiles));
    for (std::size_t i = 0; i < all.size(); ++i)
      all[i] = static_cast<std::uint32_t>(i);
    return all;
  }
  return rng.sample_without_replacement(static_cast<std::uint32_t>(n_tiles),
                                        static_cast<std::uint32_t>(bag_size));
}

std::vector<std::uint32_t> inference_sample(const std::string& bag_id,
                                            std::int64_t n_tiles,
                                            std::int64_t bag_size,
                                            std::uint64_t seed) {
  Rng rng(seed, kInferSampleTag, Rng::hash_string(bag_id));
  return sample_bag(n_tiles, bag_size, rng);
}

BagStore::BagStore(std::vector<FeatureBag> bags) : bags_(std::move(bags)) {
  for (std::size_t i = 0; i < bags_.size(); ++i) {
    if (!index_.emplace(bags_[i].bag_id, i).second)
      throw Error(ErrorCode::IdMismatch,
                  "duplicate bag_id: " + bags_[i].bag_id);
  }
}

const FeatureBag& BagStore::get(const std::string& bag_id) const {
  const auto it = index_.find(bag_id);
  if (it == index_.end())
    throw Error(ErrorCode::IdMismatch, "unknown bag_id: " + bag_id);
  return bags_[it->second];
}

FoldModel train_fold(const BagStore& store, const CohortManifest& manifest,
                     const SplitAssignment& assignment, int test_fold,
                     const std::vector<std::string>& targets,
                     const TrainConfig& config, const ModeSpec& mode) {
  config.validate();
  if (targets.empty())
    throw Error(ErrorCode::ConfigError, "no targets to train on");
  const auto roles = fold_roles(assignment, test_fold);

  std::vector<std::string> train_bags;
  for (const int f : roles.train_folds) {
    const auto fold_bags = assignment.bags_in_fold(f);
    train_bags.insert(train_bags.end(), fold_bags.begin(), fold_bags.end());
  }
  std::sort(train_bags.begin(), train_bags.end());
  const auto selection_bags = assignment.bags_in_fold(roles.selection_fold);
  if (train_bags.empty())
    throw Error(ErrorCode::EmptyDev, "no training bags in dev folds");
  if (selection_bags.empty())
    throw Error(ErrorCode::SelectionInfeasible, "selection fold is empty");

  const auto effective_targets =
      mode.mode == TrainMode::kSingletask
          ? std::vector<std::string>{mode.target_id}
          : targets;
  auto binding = bind_targets(manifest, effective_targets);
  compute_class_weights(binding, manifest, train_bags);

  const auto dim = store.get(train_bags.front()).dim();
  Rng init_rng(config.seed, kInitTag, static_cast<std::uint64_t>(test_fold),
               Rng::hash_string(mode.to_string()));
  ModelParams params = init_params(
      dim, config.hidden, config.attn_dim,
      static_cast<std::int64_t>(binding.ids.size()), init_rng.next_u64(),
      config.gated_attention);
  AdamState state = AdamState::init(params);

  FoldModel result;
  double best_score = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  ModelParams best_params = params;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle_rng(config.seed, kShuffleTag,
                    static_cast<std::uint64_t>(test_fold),
                    static_cast<std::uint64_t>(epoch));
    const auto order =
        shuffle_rng.permutation(static_cast<std::uint32_t>(train_bags.size()));

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const auto stop = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<FeatureMatrix> tiles(stop - start);
      std::vector<BagSample> batch(stop - start);
      parallel_for(stop - start, [&](std::size_t b) {
        const auto& bag_id = train_bags[order[start + b]];
        const auto& bag = store.get(bag_id);
        Rng sample_rng(config.seed, kTrainSampleTag,
                       static_cast<std::uint64_t>(test_fold),
                       static_cast<std::uint64_t>(epoch));
        sample_rng.fold(Rng::hash_string(bag_id));
        const auto idx =
            sample_bag(bag.n_tiles(), config.train_bag_size, sample_rng);
        tiles[b] = take_rows(bag.features, idx);
        batch[b].tiles = &tiles[b];
        batch[b].labels = bound_labels(*manifest.find(bag_id), binding);
      });
      const auto grads = backward(params, batch, binding.class_weights);
      adam_step(params, grads, state, config);
    }

    const double score = selection_score(params, store, manifest,
                                         selection_bags, binding, config);
    result.selection_trace.push_back(score);
    if (score > best_score) {
      best_score = score;
      best_epoch = epoch;
      best_params = params;
    }
    if (epoch - best_epoch >= config.patience) break;
  }
  result.params = std::move(best_params);
  result.best_epoch = best_epoch;
  return result;
}

FoldModels train_cv(const BagStore& store, const CohortManifest& manifest,
                    const SplitAssignment& assignment,
                    const std::vector<std::string>& targets,
                    const TrainConfig& config, const ModeSpec& mode) {
  FoldModels models;
  models.mode = mode;
  models.config = config;
  models.target_ids = mode.mode == TrainMode::kSingletask
                          ? std::vector<std::string>{mode.target_id}
                          : targets;
  for (int f = 0; f < assignment.k; ++f)
    models.folds.push_back(
        train_fold(store, manifest, assignment, f, targets, config, mode));
  return models;
}

PredictionSet predict(const FoldModels& models,
                      const std::vector<const FeatureBag*>& bags,
                      const TrainConfig& config, bool ensemble) {
  if (models.folds.empty())
    throw Error(ErrorCode::ShapeError, "no fold models");
  const auto n_folds = ensemble ? models.folds.size() : std::size_t{1};
  const auto& first = models.folds.front().params;
  for (const auto& fold : models.folds)
    if (fold.params.dim != first.dim || fold.params.hidden != first.hidden ||
        fold.params.n_tasks != first.n_tasks)
      throw Error(ErrorCode::ShapeError, "fold models disagree on dimensions");

  PredictionSet out;
  out.target_ids = models.target_ids;
  out.bag_ids.reserve(bags.size());
  for (const auto* bag : bags) out.bag_ids.push_back(bag->bag_id);
  out.probs.resize(static_cast<Eigen::Index>(bags.size()),
                   static_cast<Eigen::Index>(models.target_ids.size()));
  out.attention.resize(bags.size());
  out.tile_indices.resize(bags.size());
  out.embeddings.resize(static_cast<Eigen::Index>(bags.size()), first.hidden);

  parallel_for(bags.size(), [&](std::size_t i) {
    const auto& bag = *bags[i];
    const auto idx = inference_sample(bag.bag_id, bag.n_tiles(),
                                      config.infer_bag_size, config.seed);
    const auto tiles = take_rows(bag.features, idx);
    Vector prob_sum = Vector::Zero(first.n_tasks);
    Vector embed_sum = Vector::Zero(first.hidden);
    for (std::size_t f = 0; f < n_folds; ++f) {
      const auto result = forward(models.folds[f].params, tiles);
      prob_sum += result.task_probs.col(1);
      embed_sum += result.embedding;
      if (f == 0) out.attention[i] = result.attention;
    }
    out.probs.row(static_cast<Eigen::Index>(i)) =
        (prob_sum / double(n_folds)).transpose();
    out.embeddings.row(static_cast<Eigen::Index>(i)) =
        (embed_sum / double(n_folds)).transpose();
    out.tile_indices[i] = idx;
  });
  return out;
}

PredictionSet predict_cv(const FoldModels& models, const BagStore& store,
                         const SplitAssignment& assignment,
                         const TrainConfig& config) {
  if (models.folds.size() != static_cast<std::size_t>(assignment.k))
    throw Error(ErrorCode::ShapeError,
                "fold model count does not match assignment k");
  const auto& first = models.folds.front().params;
  std::vector<const FeatureBag*> bags;
  std::vector<int> fold_of;
  for (const auto& [bag_id, entry] : assignment.by_bag) {
    if (entry.subset != Subset::kDev) continue;
    bags.push_back(&store.get(bag_id));
    fold_of.push_back(*entry.fold);
  }

  PredictionSet out;
  out.target_ids = models.target_ids;
  for (const auto* bag : bags) out.bag_ids.push_back(bag->bag_id);
  out.probs.resize(static_cast<Eigen::Index>(bags.size()),
                   static_cast<Eigen::Index>(models.target_ids.size()));
  out.attention.resize(bags.size());
  out.tile_indices.resize(bags.size());
  out.embeddings.resize(static_cast<Eigen::Index>(bags.size()), first.hidden);

  parallel_for(bags.size(), [&](std::size_t i) {
    const auto& bag = *bags[i];
    const auto idx = inference_sample(bag.bag_id, bag.n_tiles(),
                                      config.infer_bag_size, config.seed);
    const auto tiles = take_rows(bag.features, idx);
    const auto result = forward(models.folds[fold_of[i]].params, tiles);
    out.probs.row(static_cast<Eigen::Index>(i)) =
        result.task_probs.col(1).transpose();
    out.embeddings.row(static_cast<Eigen::Index>(i)) =
        result.embedding.transpose();
    out.attention[i] = result.attention;
    out.tile_indices[i] = idx;
  });
  return out;
}

void save_fold_models(const FoldModels& models, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::StoreIo, "cannot create " + dir);
  for (std::size_t f = 0; f < models.folds.size(); ++f)
    save_params(models.folds[f].params,
                (fs::path(dir) / ("fold_" + std::to_string(f) + ".milm"))
                    .string());
  json meta;
  meta["mode"] = models.mode.to_string();
  meta["k"] = models.folds.size();
  meta["target_ids"] = models.target_ids;
  json traces = json::array();
  json best_epochs = json::array();
  for (const auto& fold : models.folds) {
    traces.push_back(fold.selection_trace);
    best_epochs.push_back(fold.best_epoch);
  }
  meta["selection_traces"] = traces;
  meta["best_epochs"] = best_epochs;
  const auto& c = models.config;
  meta["config"] = {{"learning_rate", c.learning_rate},
                    {"weight_decay", c.weight_decay},
                    {"batch_size", c.batch_size},
                    {"train_bag_size", c.train_bag_size},
                    {"infer_bag_size", c.infer_bag_size},
                    {"max_epochs", c.max_epochs},
                    {"patience", c.patience},
                    {"gated_attention", c.gated_attention},
                    {"hidden", c.hidden},
                    {"attn_dim", c.attn_dim},
                    {"train_seed", c.seed}};
  std::ofstream out(fs::path(dir) / "meta.json", std::ios::binary);
  if (!out) throw Error(ErrorCode::StoreIo, "cannot write meta.json");
  out << meta.dump(2) << "\n";
}

FoldModels load_fold_models(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "meta.json", std::ios::binary);
  if (!in) throw Error(ErrorCode::StoreIo, "missing meta.json in " + dir);
  json meta;
  try {
    in >> meta;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::FormatError, std::string("bad meta.json: ") + e.what());
  }
  FoldModels models;
  models.mode = ModeSpec::parse(meta.at("mode").get<std::string>());
  models.target_ids = meta.at("target_ids").get<std::vector<std::string>>();
  const auto& c = meta.at("config");
  models.config.learning_rate = c.at("learning_rate").get<double>();
  models.config.weight_decay = c.at("weight_decay").get<double>();
  models.config.batch_size = c.at("batch_size").get<std::int64_t>();
  models.config.train_bag_size = c.at("train_bag_size").get<std::int64_t>();
  models.config.infer_bag_size = c.at("infer_bag_size").get<std::int64_t>();
  models.config.max_epochs = c.at("max_epochs").get<std::int64_t>();
  models.config.patience = c.at("patience").get<std::int64_t>();
  models.config.gated_attention = c.at("gated_attention").get<bool>();
  models.config.hidden = c.at("hidden").get<std::int64_t>();
  models.config.attn_dim = c.at("attn_dim").get<std::int64_t>();
  models.config.seed = c.at("train_seed").get<std::uint64_t>();
  const auto k = meta.at("k").get<std::size_t>();
  for (std::size_t f = 0; f < k; ++f) {
    FoldModel fold;
    fold.params = load_params(
        (fs::path(dir) / ("fold_" + std::to_string(f) + ".milm")).string());
    if (f < meta.at("selection_traces").size())
      fold.selection_trace =
          meta.at("selection_traces")[f].get<std::vector<double>>();
    if (f < meta.at("best_epochs").size())
      fold.best_epoch = meta.at("best_epochs")[f].get<int>();
    models.folds.push_back(std::move(fold));
  }
  return models;
}

}  // namespace mtmil
