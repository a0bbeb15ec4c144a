#include <cmath>

#include "doctest.h"
#include "mtmil/analysis.hpp"
#include "mtmil/rng.hpp"

using namespace mtmil;

namespace {

// Bags whose tumor tiles are exactly the ones the fake attention favours.
struct AttnFixture {
  BagStore store;
  PredictionSet preds;
};

AttnFixture make_attn_fixture(int n_bags, bool attend_tumor) {
  std::vector<FeatureBag> bags;
  PredictionSet preds;
  Rng rng(71);
  for (int b = 0; b < n_bags; ++b) {
    const int n = 10;
    FeatureBag bag;
    bag.bag_id = "b" + std::to_string(b);
    bag.features = FeatureMatrix::Zero(n, 2);
    std::vector<std::uint8_t> cls(n), tumor(n);
    for (int i = 0; i < n; ++i) {
      // Tiles 0..2 are tumor, the rest rotate through stroma/immune.
      cls[i] = i < 3 ? kTumor : (i % 2 ? kStroma : kImmune);
      tumor[i] = i < 3 ? 1 : 0;
    }
    bag.tile_class = cls;
    bag.tile_tumor_label = tumor;
    preds.bag_ids.push_back(bag.bag_id);
    std::vector<std::uint32_t> indices(n);
    Vector attn(n);
    for (int i = 0; i < n; ++i) {
      indices[i] = std::uint32_t(i);
      // When not attending tumor, the heat goes to the non-tumor tiles, so
      // top-attention tumor fractions sit strictly below the all-tile ones.
      const bool hot = attend_tumor ? tumor[i] == 1 : tumor[i] == 0;
      attn[i] = (hot ? 10.0 : 1.0) + 0.01 * rng.uniform();
    }
    attn /= attn.sum();
    preds.attention.push_back(attn);
    preds.tile_indices.push_back(indices);
    bags.push_back(std::move(bag));
  }
  preds.target_ids = {"t"};
  preds.probs = Matrix::Zero(n_bags, 1);
  return {BagStore(std::move(bags)), std::move(preds)};
}

}  // namespace

TEST_CASE("top-attention fractions pick the hot tumor tiles") {
  auto fx = make_attn_fixture(12, true);
  const auto report = high_attention_fractions(fx.preds, fx.store, 0.3);
  REQUIRE(report.per_bag.size() == 12);
  for (const auto& bag : report.per_bag) {
    REQUIRE(bag.all_fractions.size() == kNumTileClasses);
    REQUIRE(bag.top_fractions.size() == kNumTileClasses);
    // All-tile tumor fraction is 3/10; the top 30% is all tumor.
    CHECK(bag.all_fractions[kTumor] == doctest::Approx(0.3));
    CHECK(bag.top_fractions[kTumor] == doctest::Approx(1.0));
  }
  CHECK(report.tumor_enrichment.p_value < 0.01);
}

TEST_CASE("top_frac of one reproduces the all-tile fractions") {
  auto fx = make_attn_fixture(5, true);
  const auto report = high_attention_fractions(fx.preds, fx.store, 1.0);
  for (const auto& bag : report.per_bag)
    for (int c = 0; c < kNumTileClasses; ++c)
      CHECK(bag.top_fractions[c] == doctest::Approx(bag.all_fractions[c]));
}

TEST_CASE("tumor-avoiding attention shows no tumor enrichment") {
  auto fx = make_attn_fixture(12, false);
  const auto report = high_attention_fractions(fx.preds, fx.store, 0.3);
  CHECK(report.tumor_enrichment.p_value > 0.5);
}

TEST_CASE("attention ties break toward the lower tile index") {
  std::vector<FeatureBag> bags(1);
  bags[0].bag_id = "b";
  bags[0].features = FeatureMatrix::Zero(4, 1);
  bags[0].tile_class = std::vector<std::uint8_t>{kStroma, kTumor, kTumor, kTumor};
  bags[0].tile_tumor_label = std::vector<std::uint8_t>{0, 1, 1, 1};
  PredictionSet preds;
  preds.bag_ids = {"b"};
  preds.target_ids = {"t"};
  preds.probs = Matrix::Zero(1, 1);
  preds.tile_indices = {{0, 1, 2, 3}};
  preds.attention = {Vector::Constant(4, 0.25)};
  BagStore store(std::move(bags));
  // ceil(0.25*4) = 1 top tile; the tie goes to tile 0, which is stroma.
  const auto report = high_attention_fractions(preds, store, 0.25);
  CHECK(report.per_bag[0].top_fractions[kTumor] == doctest::Approx(0.0));
  CHECK(report.per_bag[0].top_fractions[kStroma] == doctest::Approx(1.0));
}

TEST_CASE("attention that matches tumor annotations scores a perfect AUC") {
  auto fx = make_attn_fixture(20, true);
  const auto result = attention_annotation_auc(fx.preds, fx.store, 300, 0.95, 5);
  CHECK(result.auc == doctest::Approx(1.0));
  CHECK(result.ci.first > 0.5);
  // Deterministic in the seed.
  const auto again = attention_annotation_auc(fx.preds, fx.store, 300, 0.95, 5);
  CHECK(result.ci == again.ci);
}

TEST_CASE("logistic probe separates a separable embedding") {
  Rng rng(23);
  const int n = 120;
  Matrix embeddings(n, 2);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = i % 2;
    const double center = labels[i] ? 2.0 : -2.0;
    embeddings(i, 0) = center + 0.3 * rng.normal();
    embeddings(i, 1) = rng.normal();
  }
  const auto probe = logistic_probe(embeddings, labels, 1e-3, 7, 200, 0.95);
  CHECK(probe.converged);
  CHECK(probe.auc == doctest::Approx(1.0));
  CHECK(probe.ci.first > 0.9);
  CHECK(probe.n_train + probe.n_test == n);
  CHECK(probe.n_test == 24);  // round(0.2 * 60) per class
  // The informative dimension dominates the weight vector.
  CHECK(std::abs(probe.weights[0]) > std::abs(probe.weights[1]));
}

TEST_CASE("permuted labels stay near chance") {
  Rng rng(29);
  const int n = 200;
  Matrix embeddings(n, 2);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = i % 2;  // labels carry no signal relative to the features
    embeddings(i, 0) = rng.normal();
    embeddings(i, 1) = rng.normal();
  }
  const auto probe = logistic_probe(embeddings, labels, 1e-2, 11, 200, 0.95);
  CHECK(probe.auc > 0.2);
  CHECK(probe.auc < 0.8);
}

TEST_CASE("stronger regularization shrinks the probe weights") {
  Rng rng(31);
  const int n = 80;
  Matrix embeddings(n, 3);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = i % 2;
    embeddings(i, 0) = (labels[i] ? 1.0 : -1.0) + rng.normal();
    embeddings(i, 1) = rng.normal();
    embeddings(i, 2) = rng.normal();
  }
  const auto light = logistic_probe(embeddings, labels, 1e-4, 3, 50, 0.95);
  const auto heavy = logistic_probe(embeddings, labels, 100.0, 3, 50, 0.95);
  CHECK(heavy.weights.norm() < 0.1 * light.weights.norm());
}

TEST_CASE("degenerate probe splits are rejected") {
  Matrix embeddings(3, 2);
  embeddings.setZero();
  try {
    logistic_probe(embeddings, {1, 1, 1}, 1e-2, 1, 50, 0.95);
    FAIL("expected DegenerateSplit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateSplit);
  }
}

TEST_CASE("probe json names the task and interval") {
  ProbeResult r;
  r.task = "grade";
  r.auc = 0.9;
  r.ci = {0.8, 0.95};
  r.weights = Vector::Zero(2);
  const auto json = r.to_json();
  CHECK(json.find("grade") != std::string::npos);
  CHECK(json.find("0.9") != std::string::npos);
}
