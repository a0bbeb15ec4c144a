#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtmil/error.hpp"
#include "mtmil/feature_store.hpp"
#include "mtmil/keyval.hpp"

namespace mtmil {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Attention-MIL network: affine+ReLU tile encoder, tanh attention (optionally
// gated), attention-pooled embedding, one two-logit softmax head per task.
struct ModelParams {
  std::int64_t dim = 0;
  std::int64_t hidden = 0;    // h
  std::int64_t attn_dim = 0;  // a
  std::int64_t n_tasks = 0;   // T
  bool gated = false;

  Matrix encoder_w;  // h x dim
  Vector encoder_b;  // h
  Matrix attn_v;     // a x h
  Vector attn_w;     // a
  Matrix attn_u;     // a x h, used when gated
  std::vector<Matrix> head_w;  // T of 2 x h
  std::vector<Vector> head_b;  // T of 2

  void validate() const;
  static ModelParams zeros_like(const ModelParams& other);

  // Flat traversal in the checkpoint order; fn(value&) over every scalar.
  template <typename Fn>
  void for_each_param(Fn&& fn) {
    auto matrix = [&](Matrix& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) fn(m(r, c));
    };
    auto vector = [&](Vector& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) fn(v[i]);
    };
    matrix(encoder_w);
    vector(encoder_b);
    matrix(attn_v);
    vector(attn_w);
    if (gated) matrix(attn_u);
    for (std::int64_t t = 0; t < n_tasks; ++t) {
      matrix(head_w[t]);
      vector(head_b[t]);
    }
  }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::int64_t batch_size = 16;
  std::int64_t train_bag_size = 100;
  std::int64_t infer_bag_size = 1000;
  std::int64_t max_epochs = 30;
  std::int64_t patience = 5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool gated_attention = false;
  std::int64_t hidden = 128;
  std::int64_t attn_dim = 64;
  std::uint64_t seed = 0;

  void validate() const;
  static TrainConfig from_keyval(const KeyValueFile& kv);
  static std::vector<std::string> config_keys();
};

struct AdamState {
  ModelParams m;  // first moments, same shapes as the params
  ModelParams v;  // second moments
  std::int64_t step = 0;

  static AdamState init(const ModelParams& params);
};

struct ForwardResult {
  Matrix task_probs;  // T x 2, rows sum to 1
  Vector attention;   // n, sums to 1
  Vector embedding;   // h
};

ModelParams init_params(std::int64_t dim, std::int64_t hidden,
                        std::int64_t attn_dim, std::int64_t n_tasks,
                        std::uint64_t seed, bool gated = false);

ForwardResult forward(const ModelParams& params,
                      const Eigen::Ref<const FeatureMatrix>& tiles);

// Per-class loss weights, w_neg = prevalence, w_pos = 1 - prevalence.
std::pair<double, double> weights_from_prevalence(double prevalence);

// labels: per-task {0,1,kLabelNA}; class_weights: per-task (w_neg, w_pos).
// Mean weighted cross-entropy over the non-NA tasks.
double multitask_loss(const Matrix& task_probs,
                      const std::vector<std::int8_t>& labels,
                      const std::vector<std::pair<double, double>>& weights);

struct BagSample {
  const FeatureMatrix* tiles = nullptr;
  std::vector<std::int8_t> labels;
};

// Exact gradient of the mean batch loss; also returns that loss.
ModelParams backward(const ModelParams& params,
                     const std::vector<BagSample>& batch,
                     const std::vector<std::pair<double, double>>& weights,
                     double* out_loss = nullptr);

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& config);

// Max relative error between analytic and central finite-difference
// gradients over every parameter.
double grad_check(const ModelParams& params,
                  const std::vector<BagSample>& batch,
                  const std::vector<std::pair<double, double>>& weights,
                  double eps);

std::vector<std::uint8_t> serialize_params(const ModelParams& params);
ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes);
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

}  // namespace mtmil
