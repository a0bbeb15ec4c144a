#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtmil/feature_store.hpp"
#include "mtmil/mil_net.hpp"
#include "mtmil/rng.hpp"
#include "mtmil/splitter.hpp"

namespace mtmil {

enum class TrainMode { kMultitask, kSingletask };

struct ModeSpec {
  TrainMode mode = TrainMode::kMultitask;
  std::string target_id;  // set for singletask

  static ModeSpec parse(const std::string& text);
  std::string to_string() const;
};

struct FoldModel {
  ModelParams params;
  std::vector<double> selection_trace;  // mean selection AUC per epoch
  int best_epoch = 0;
};

struct FoldModels {
  std::vector<FoldModel> folds;  // indexed by test_fold
  ModeSpec mode;
  std::vector<std::string> target_ids;  // head order
  TrainConfig config;
};

// Indices of the tiles used for one pass: all of them when the bag fits,
// otherwise a uniform sample without replacement.
std::vector<std::uint32_t> sample_bag(std::int64_t n_tiles,
                                      std::int64_t bag_size, Rng& rng);

// Inference tile sample for a bag; keyed by the bag_id so predictions do
// not depend on iteration order.
std::vector<std::uint32_t> inference_sample(const std::string& bag_id,
                                            std::int64_t n_tiles,
                                            std::int64_t bag_size,
                                            std::uint64_t seed);

class BagStore {
 public:
  explicit BagStore(std::vector<FeatureBag> bags);
  const FeatureBag& get(const std::string& bag_id) const;
  const std::vector<FeatureBag>& all() const { return bags_; }

 private:
  std::vector<FeatureBag> bags_;
  std::map<std::string, std::size_t> index_;
};

FoldModel train_fold(const BagStore& store, const CohortManifest& manifest,
                     const SplitAssignment& assignment, int test_fold,
                     const std::vector<std::string>& targets,
                     const TrainConfig& config, const ModeSpec& mode);

FoldModels train_cv(const BagStore& store, const CohortManifest& manifest,
                    const SplitAssignment& assignment,
                    const std::vector<std::string>& targets,
                    const TrainConfig& config, const ModeSpec& mode);

struct PredictionSet {
  std::vector<std::string> bag_ids;
  std::vector<std::string> target_ids;
  Matrix probs;                     // n_bags x T, positive-class probability
  std::vector<Vector> attention;    // per bag, length = tiles used
  std::vector<std::vector<std::uint32_t>> tile_indices;
  Matrix embeddings;                // n_bags x h
};

// Fold-ensemble prediction: mean positive-class probability over the fold
// models (fold 0 only when ensemble is false), attention from fold 0,
// embedding averaged over the folds used.
PredictionSet predict(const FoldModels& models,
                      const std::vector<const FeatureBag*>& bags,
                      const TrainConfig& config, bool ensemble);

// Cross-validation predictions: each dev bag is scored by the model whose
// test fold contains it.
PredictionSet predict_cv(const FoldModels& models, const BagStore& store,
                         const SplitAssignment& assignment,
                         const TrainConfig& config);

void save_fold_models(const FoldModels& models, const std::string& dir);
FoldModels load_fold_models(const std::string& dir);

}  // namespace mtmil
