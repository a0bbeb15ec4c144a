#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtmil/stats.hpp"
#include "mtmil/trainer.hpp"

namespace mtmil {

struct BagClassFractions {
  std::string bag_id;
  std::vector<double> all_fractions;  // per tile class, sums to 1
  std::vector<double> top_fractions;  // over the top-attention tiles
};

struct AttentionReport {
  std::vector<BagClassFractions> per_bag;
  TestResult tumor_enrichment;  // one-tailed Wilcoxon, top > all
  std::optional<double> attention_auc;
  std::optional<std::pair<double, double>> attention_auc_ci;
  std::string to_json() const;
};

// Top set = ceil(top_frac * n) tiles by attention, ties broken by tile
// index ascending; class fractions over that set and over all scored tiles.
// Also runs the cohort-level paired Wilcoxon on tumor fractions.
AttentionReport high_attention_fractions(const PredictionSet& predictions,
                                         const BagStore& store,
                                         double top_frac = 0.10);

struct AttentionAucResult {
  double auc;
  std::pair<double, double> ci;
};

// Pooled (attention, tumor label) AUC across bags, with a slide-level
// bootstrap interval.
AttentionAucResult attention_annotation_auc(const PredictionSet& predictions,
                                            const BagStore& store,
                                            std::int64_t B, double level,
                                            std::uint64_t seed);

// Fold-averaged attention-pooled embeddings, one row per bag.
Matrix extract_embeddings(const FoldModels& models,
                          const std::vector<const FeatureBag*>& bags,
                          const TrainConfig& config);

struct ProbeResult {
  std::string task;
  double auc = 0.0;
  std::pair<double, double> ci{0.0, 0.0};
  Vector weights;
  double intercept = 0.0;
  bool converged = false;
  std::int64_t n_train = 0;
  std::int64_t n_test = 0;
  std::string to_json() const;
};

// L2-regularized logistic regression on embeddings, fit by full-batch
// gradient descent with backtracking line search; AUC and bootstrap
// interval on a held-out 20% stratified split.
ProbeResult logistic_probe(const Matrix& embeddings,
                           const std::vector<int>& labels, double l2,
                           std::uint64_t split_seed, std::int64_t bootstrap_b,
                           double level);

}  // namespace mtmil
