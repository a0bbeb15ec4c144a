#include "mtmil/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "mtmil/parallel.hpp"
#include "mtmil/rng.hpp"

namespace mtmil {

namespace {

using nlohmann::json;

constexpr std::uint64_t kSlideBootTag = 0x53424f4fULL;
constexpr std::uint64_t kProbeSplitTag = 0x50524f42ULL;

std::vector<std::size_t> top_attention_indices(const Vector& attention,
                                               double top_frac) {
  const auto n = static_cast<std::size_t>(attention.size());
  const auto top_n = static_cast<std::size_t>(
      std::ceil(top_frac * double(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Highest attention first; equal scores keep the lower tile index.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return attention[static_cast<Eigen::Index>(a)] >
                            attention[static_cast<Eigen::Index>(b)];
                   });
  order.resize(std::min(top_n, n));
  return order;
}

}  // namespace

AttentionReport high_attention_fractions(const PredictionSet& predictions,
                                         const BagStore& store,
                                         double top_frac) {
  if (top_frac <= 0.0 || top_frac > 1.0)
    throw Error(ErrorCode::ConfigError, "top_frac outside (0,1]");
  AttentionReport report;
  std::vector<double> all_tumor, top_tumor;
  for (std::size_t i = 0; i < predictions.bag_ids.size(); ++i) {
    const auto& bag = store.get(predictions.bag_ids[i]);
    if (!bag.tile_class)
      throw Error(ErrorCode::MissingTruth,
                  "bag " + bag.bag_id + " lacks tile_class");
    const auto& attn = predictions.attention[i];
    const auto& used = predictions.tile_indices[i];

    BagClassFractions fractions;
    fractions.bag_id = bag.bag_id;
    fractions.all_fractions.assign(kNumTileClasses, 0.0);
    fractions.top_fractions.assign(kNumTileClasses, 0.0);
    for (const auto tile : used)
      fractions.all_fractions[(*bag.tile_class)[tile]] += 1.0;
    for (auto& f : fractions.all_fractions) f /= double(used.size());
    const auto top = top_attention_indices(attn, top_frac);
    for (const auto k : top)
      fractions.top_fractions[(*bag.tile_class)[used[k]]] += 1.0;
    for (auto& f : fractions.top_fractions) f /= double(top.size());

    all_tumor.push_back(fractions.all_fractions[kTumor]);
    top_tumor.push_back(fractions.top_fractions[kTumor]);
    report.per_bag.push_back(std::move(fractions));
  }
  try {
    report.tumor_enrichment =
        wilcoxon_signed_rank_one_tailed(top_tumor, all_tumor);
  } catch (const Error& e) {
    // No difference anywhere (e.g. top set == all tiles): no enrichment.
    if (e.code() != ErrorCode::AllZero) throw;
    report.tumor_enrichment.statistic = 0.0;
    report.tumor_enrichment.p_value = 1.0;
    report.tumor_enrichment.n = 0;
    report.tumor_enrichment.method = TestMethod::kWilcoxonExact;
  }
  return report;
}

AttentionAucResult attention_annotation_auc(const PredictionSet& predictions,
                                            const BagStore& store,
                                            std::int64_t B, double level,
                                            std::uint64_t seed) {
  const auto n_bags = predictions.bag_ids.size();
  std::vector<std::vector<double>> bag_scores(n_bags);
  std::vector<std::vector<int>> bag_labels(n_bags);
  for (std::size_t i = 0; i < n_bags; ++i) {
    const auto& bag = store.get(predictions.bag_ids[i]);
    if (!bag.tile_tumor_label)
      throw Error(ErrorCode::MissingTruth,
                  "bag " + bag.bag_id + " lacks tile_tumor_label");
    const auto& attn = predictions.attention[i];
    const auto& used = predictions.tile_indices[i];
    for (std::size_t k = 0; k < used.size(); ++k) {
      bag_scores[i].push_back(attn[static_cast<Eigen::Index>(k)]);
      bag_labels[i].push_back((*bag.tile_tumor_label)[used[k]]);
    }
  }

  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  for (std::size_t i = 0; i < n_bags; ++i) {
    pooled_scores.insert(pooled_scores.end(), bag_scores[i].begin(),
                         bag_scores[i].end());
    pooled_labels.insert(pooled_labels.end(), bag_labels[i].begin(),
                         bag_labels[i].end());
  }
  AttentionAucResult result;
  result.auc = roc_auc(pooled_scores, pooled_labels);

  // Slide-level bootstrap: resample bags, pool, recompute.
  std::vector<double> aucs(static_cast<std::size_t>(B));
  std::vector<char> failed(static_cast<std::size_t>(B), 0);
  parallel_for(static_cast<std::size_t>(B), [&](std::size_t r) {
    Rng rng(seed, kSlideBootTag, static_cast<std::uint64_t>(r));
    bool done = false;
    for (int attempt = 0; attempt < 100 && !done; ++attempt) {
      std::vector<double> s;
      std::vector<int> l;
      std::int64_t pos = 0, neg = 0;
      for (std::size_t i = 0; i < n_bags; ++i) {
        const auto j = rng.uniform_index(n_bags);
        s.insert(s.end(), bag_scores[j].begin(), bag_scores[j].end());
        for (const int y : bag_labels[j]) {
          l.push_back(y);
          (y ? pos : neg) += 1;
        }
      }
      if (pos == 0 || neg == 0) continue;
      aucs[r] = roc_auc(s, l);
      done = true;
    }
    if (!done) failed[r] = 1;
  });
  for (const char f : failed)
    if (f)
      throw Error(ErrorCode::DegenerateBootstrap,
                  "slide bootstrap redraw cap exceeded");
  std::sort(aucs.begin(), aucs.end());
  const double alpha = (1.0 - level) / 2.0;
  auto nearest_rank = [&](double q) {
    auto rank = static_cast<std::int64_t>(std::ceil(q * double(B)));
    rank = std::clamp<std::int64_t>(rank, 1, B);
    return aucs[static_cast<std::size_t>(rank - 1)];
  };
  result.ci = {nearest_rank(alpha), nearest_rank(1.0 - alpha)};
  return result;
}

Matrix extract_embeddings(const FoldModels& models,
                          const std::vector<const FeatureBag*>& bags,
                          const TrainConfig& config) {
  return predict(models, bags, config, /*ensemble=*/true).embeddings;
}

ProbeResult logistic_probe(const Matrix& embeddings,
                           const std::vector<int>& labels, double l2,
                           std::uint64_t split_seed, std::int64_t bootstrap_b,
                           double level) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  if (labels.size() != n)
    throw Error(ErrorCode::ShapeError, "labels/embeddings size mismatch");
  if (l2 < 0.0) throw Error(ErrorCode::ConfigError, "l2 must be nonnegative");

  // Seeded stratified 80/20 split.
  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t i = 0; i < n; ++i)
    (labels[i] == 1 ? pos_idx : neg_idx).push_back(i);
  if (pos_idx.empty() || neg_idx.empty())
    throw Error(ErrorCode::DegenerateSplit, "single-class labels");
  Rng rng(split_seed, kProbeSplitTag);
  std::vector<std::size_t> train, test;
  for (auto* group : {&pos_idx, &neg_idx}) {
    const auto perm = rng.permutation(static_cast<std::uint32_t>(group->size()));
    const auto n_test = static_cast<std::size_t>(
        std::llround(0.2 * double(group->size())));
    for (std::size_t i = 0; i < group->size(); ++i)
      (i < n_test ? test : train).push_back((*group)[perm[i]]);
  }
  auto has_both = [&](const std::vector<std::size_t>& set) {
    bool p = false, q = false;
    for (const auto i : set) (labels[i] == 1 ? p : q) = true;
    return p && q;
  };
  if (!has_both(train) || !has_both(test))
    throw Error(ErrorCode::DegenerateSplit,
                "both classes required in train and test");
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());

  const auto h = embeddings.cols();
  Matrix x_train(train.size(), h);
  Vector y_train(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    x_train.row(static_cast<Eigen::Index>(i)) =
        embeddings.row(static_cast<Eigen::Index>(train[i]));
    y_train[static_cast<Eigen::Index>(i)] = labels[train[i]];
  }

  // Full-batch GD with Armijo backtracking; intercept unregularized.
  Vector w = Vector::Zero(h);
  double b = 0.0;
  const double inv_n = 1.0 / double(train.size());
  auto objective = [&](const Vector& wv, double bv, Vector* grad_w,
                       double* grad_b) {
    Vector margin = x_train * wv;
    margin.array() += bv;
    double loss = 0.0;
    Vector residual(margin.size());
    for (Eigen::Index i = 0; i < margin.size(); ++i) {
      const double m = margin[i];
      const double y = y_train[i];
      // log(1 + exp(-s)) with s = (2y-1)*m, numerically stable.
      const double s = (2.0 * y - 1.0) * m;
      loss += s > 0 ? std::log1p(std::exp(-s)) : -s + std::log1p(std::exp(s));
      const double p = 1.0 / (1.0 + std::exp(-m));
      residual[i] = p - y;
    }
    loss = loss * inv_n + 0.5 * l2 * wv.squaredNorm();
    if (grad_w) *grad_w = inv_n * (x_train.transpose() * residual) + l2 * wv;
    if (grad_b) *grad_b = inv_n * residual.sum();
    return loss;
  };

  bool converged = false;
  Vector grad_w(h);
  double grad_b = 0.0;
  double loss = objective(w, b, &grad_w, &grad_b);
  for (int iter = 0; iter < 10000; ++iter) {
    const double grad_norm =
        std::sqrt(grad_w.squaredNorm() + grad_b * grad_b);
    if (grad_norm < 1e-6) {
      converged = true;
      break;
    }
    double step = 1.0;
    bool accepted = false;
    for (int half = 0; half < 50; ++half) {
      const Vector w_new = w - step * grad_w;
      const double b_new = b - step * grad_b;
      const double trial = objective(w_new, b_new, nullptr, nullptr);
      if (trial <= loss - 1e-4 * step * grad_norm * grad_norm) {
        w = w_new;
        b = b_new;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    loss = objective(w, b, &grad_w, &grad_b);
  }

  std::vector<double> test_scores;
  std::vector<int> test_labels;
  for (const auto i : test) {
    const double m =
        (embeddings.row(static_cast<Eigen::Index>(i)) * w).value() + b;
    test_scores.push_back(1.0 / (1.0 + std::exp(-m)));
    test_labels.push_back(labels[i]);
  }

  ProbeResult result;
  result.auc = roc_auc(test_scores, test_labels);
  result.ci = bootstrap_auc_interval(test_scores, test_labels, bootstrap_b,
                                     level, split_seed);
  result.weights = w;
  result.intercept = b;
  result.converged = converged;
  result.n_train = static_cast<std::int64_t>(train.size());
  result.n_test = static_cast<std::int64_t>(test.size());
  return result;
}

std::string AttentionReport::to_json() const {
  json out;
  json bags = json::array();
  for (const auto& frac : per_bag) {
    bags.push_back({{"bag_id", frac.bag_id},
                    {"all_fractions", frac.all_fractions},
                    {"top_fractions", frac.top_fractions}});
  }
  out["per_bag"] = bags;
  out["tumor_enrichment"] = {
      {"statistic", tumor_enrichment.statistic},
      {"p", tumor_enrichment.p_value},
      {"n", tumor_enrichment.n},
      {"method", tumor_enrichment.method == TestMethod::kWilcoxonExact
                     ? "wilcoxon_exact"
                     : "wilcoxon_normal"}};
  if (attention_auc) {
    out["attention_auc"] = *attention_auc;
    if (attention_auc_ci)
      out["attention_auc_ci"] = {attention_auc_ci->first,
                                 attention_auc_ci->second};
  }
  return out.dump(2) + "\n";
}

std::string ProbeResult::to_json() const {
  json out;
  out["task"] = task;
  out["auc"] = auc;
  out["ci"] = {ci.first, ci.second};
  out["converged"] = converged;
  out["n_train"] = n_train;
  out["n_test"] = n_test;
  std::vector<double> w(weights.data(), weights.data() + weights.size());
  out["weights"] = w;
  out["intercept"] = intercept;
  return out.dump(2) + "\n";
}

}  // namespace mtmil
