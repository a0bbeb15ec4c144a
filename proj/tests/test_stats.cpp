#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "mtmil/rng.hpp"
#include "mtmil/stats.hpp"

using namespace mtmil;

namespace {

// O(n^2) pair-counting AUC: ties count one half.
double auc_oracle(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  double wins = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / double(pairs);
}

// Exact one-tailed Wilcoxon oracle: enumerate all sign assignments over the
// nonzero differences, using midranks of |d|, P(W+ >= observed).
double wilcoxon_oracle(const std::vector<double>& a,
                       const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  const int m = int(d.size());
  std::vector<double> mag(m);
  for (int i = 0; i < m; ++i) mag[i] = std::abs(d[i]);
  std::vector<double> ranks(m);
  for (int i = 0; i < m; ++i) {
    double less = 0, equal = 0;
    for (int j = 0; j < m; ++j) {
      less += mag[j] < mag[i];
      equal += mag[j] == mag[i];
    }
    ranks[i] = less + (equal + 1) / 2.0;
  }
  double observed = 0;
  for (int i = 0; i < m; ++i)
    if (d[i] > 0) observed += ranks[i];
  long hits = 0;
  const long total = 1L << m;
  for (long mask = 0; mask < total; ++mask) {
    double w = 0;
    for (int i = 0; i < m; ++i)
      if (mask & (1L << i)) w += ranks[i];
    if (w >= observed - 1e-12) ++hits;
  }
  return double(hits) / double(total);
}

}  // namespace

TEST_CASE("roc_auc equals the pair-counting oracle on tied instances") {
  Rng rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 4 + int(rng.uniform_index(40));
    std::vector<double> scores;
    std::vector<int> labels;
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      scores.push_back(double(rng.uniform_index(6)) / 5.0);  // heavy ties
      labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
      has_pos |= labels.back() == 1;
      has_neg |= labels.back() == 0;
    }
    if (!has_pos || !has_neg) continue;
    CHECK(roc_auc(scores, labels) ==
          doctest::Approx(auc_oracle(scores, labels)).epsilon(1e-14));
  }
}

TEST_CASE("roc_auc hand values and symmetries") {
  CHECK(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75));
  CHECK(roc_auc({0.5, 0.5}, {0, 1}) == doctest::Approx(0.5));
  std::vector<double> scores{0.2, 0.9, 0.3, 0.7, 0.7};
  std::vector<int> labels{0, 1, 0, 1, 0};
  std::vector<int> flipped;
  for (const int y : labels) flipped.push_back(1 - y);
  CHECK(roc_auc(scores, labels) ==
        doctest::Approx(1.0 - roc_auc(scores, flipped)));
  // Invariance under a strictly increasing transform.
  std::vector<double> warped;
  for (const double s : scores) warped.push_back(std::exp(3 * s));
  CHECK(roc_auc(warped, labels) == doctest::Approx(roc_auc(scores, labels)));
}

TEST_CASE("single-class data has no AUC") {
  try {
    roc_auc({0.1, 0.2}, {1, 1});
    FAIL("expected UndefinedAUC");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UndefinedAUC);
  }
}

TEST_CASE("roc_curve integrates back to the AUC") {
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) {
      scores.push_back(double(rng.uniform_index(8)));
      labels.push_back(i < 10 ? 1 : 0);
    }
    const auto curve = roc_curve(scores, labels);
    REQUIRE(curve.size() >= 2);
    CHECK(curve.front() == std::pair<double, double>{0.0, 0.0});
    CHECK(curve.back() == std::pair<double, double>{1.0, 1.0});
    double area = 0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
      CHECK(curve[i].first >= curve[i - 1].first);
      CHECK(curve[i].second >= curve[i - 1].second);
      area += (curve[i].first - curve[i - 1].first) *
              (curve[i].second + curve[i - 1].second) / 2.0;
    }
    CHECK(area == doctest::Approx(roc_auc(scores, labels)).epsilon(1e-12));
  }
}

TEST_CASE("bootstrap interval is deterministic and ordered") {
  Rng rng(11);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) {
    labels.push_back(i < 25 ? 1 : 0);
    scores.push_back(rng.normal() + (labels.back() ? 1.0 : 0.0));
  }
  const auto ci = bootstrap_auc_interval(scores, labels, 500, 0.95, 42);
  CHECK(ci == bootstrap_auc_interval(scores, labels, 500, 0.95, 42));
  CHECK(ci != bootstrap_auc_interval(scores, labels, 500, 0.95, 43));
  CHECK(ci.first <= ci.second);
  CHECK(ci.first >= 0.0);
  CHECK(ci.second <= 1.0);
  const double point = roc_auc(scores, labels);
  CHECK(ci.first <= point);
  CHECK(ci.second >= point);
  // A wider level gives a narrower interval.
  const auto narrow = bootstrap_auc_interval(scores, labels, 500, 0.5, 42);
  CHECK(narrow.second - narrow.first < ci.second - ci.first);
}

TEST_CASE("paired t-test matches the hand-computed example") {
  // d = [1, 0, 2, 1]: mean 1, sd sqrt(2/3), t = 2.449489..., dof 3.
  const auto r =
      paired_t_one_tailed({2, 1, 5, 3}, {1, 1, 3, 2});
  CHECK(r.statistic == doctest::Approx(std::sqrt(6.0)).epsilon(1e-12));
  CHECK(r.n == 4);
  CHECK(r.p_value == doctest::Approx(1.0 - student_t_cdf(std::sqrt(6.0), 3))
                         .epsilon(1e-12));
  CHECK(r.p_value == doctest::Approx(0.0459).epsilon(0.01));
  try {
    paired_t_one_tailed({1, 1}, {1, 1});
    FAIL("expected ZeroVariance");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroVariance);
  }
  CHECK_THROWS_AS(paired_t_one_tailed({1.0}, {0.5}), Error);
}

TEST_CASE("t-CDF matches Simpson quadrature of the density") {
  auto density = [](double x, double nu) {
    return std::exp(std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2)) /
           std::sqrt(nu * 3.14159265358979323846) *
           std::pow(1 + x * x / nu, -(nu + 1) / 2);
  };
  for (const double nu : {1.0, 3.0, 7.5, 30.0}) {
    for (const double t : {-4.0, -1.5, -0.3, 0.0, 0.7, 2.0, 5.0}) {
      // Integrate the symmetric-center form: CDF(t) = 0.5 + int_0^t pdf.
      const int steps = 40000;
      const double lo = std::min(0.0, t), hi = std::max(0.0, t);
      double integral = 0;
      const double h = (hi - lo) / steps;
      for (int i = 0; i < steps; ++i) {
        const double x0 = lo + i * h;
        integral += h / 6.0 *
                    (density(x0, nu) + 4 * density(x0 + h / 2, nu) +
                     density(x0 + h, nu));
      }
      const double expected = t >= 0 ? 0.5 + integral : 0.5 - integral;
      CHECK(student_t_cdf(t, nu) == doctest::Approx(expected).epsilon(1e-9));
    }
  }
}

TEST_CASE("normal cdf reference values") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-9));
  CHECK(normal_cdf(-1.0) == doctest::Approx(0.15865525393146).epsilon(1e-9));
}

TEST_CASE("all-positive differences give the classic 1/2^n Wilcoxon p") {
  const auto r = wilcoxon_signed_rank_one_tailed({2, 3, 4, 5, 6},
                                                 {1, 2, 3, 4, 5});
  CHECK(r.method == TestMethod::kWilcoxonExact);
  CHECK(r.p_value == doctest::Approx(1.0 / 32.0).epsilon(1e-12));
}

TEST_CASE("exact Wilcoxon agrees with full sign enumeration") {
  Rng rng(13);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 3 + int(rng.uniform_index(10));  // n <= 12
    std::vector<double> a, b;
    bool any = false;
    for (int i = 0; i < n; ++i) {
      b.push_back(0.0);
      // Discrete grid forces tied magnitudes and zero differences.
      const double d = double(int(rng.uniform_index(7)) - 3) / 2.0;
      a.push_back(d);
      any |= d != 0.0;
    }
    if (!any) continue;
    const auto r = wilcoxon_signed_rank_one_tailed(a, b);
    CHECK(r.method == TestMethod::kWilcoxonExact);
    CHECK(r.p_value == doctest::Approx(wilcoxon_oracle(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("large samples switch to the corrected normal approximation") {
  Rng rng(17);
  std::vector<double> a, b;
  for (int i = 0; i < 40; ++i) {
    b.push_back(0.0);
    a.push_back(rng.normal() + 0.8);
  }
  const auto r = wilcoxon_signed_rank_one_tailed(a, b);
  CHECK(r.method == TestMethod::kWilcoxonNormal);
  CHECK(r.p_value > 0.0);
  CHECK(r.p_value < 0.05);
}

TEST_CASE("pearson matches the direct formula") {
  Rng rng(19);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 3 + int(rng.uniform_index(20));
    std::vector<double> x, y;
    for (int i = 0; i < n; ++i) {
      x.push_back(rng.normal());
      y.push_back(0.5 * x.back() + rng.normal());
    }
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
      sx += x[i];
      sy += y[i];
      sxx += x[i] * x[i];
      syy += y[i] * y[i];
      sxy += x[i] * y[i];
    }
    const double r_direct =
        (n * sxy - sx * sy) /
        std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
    const auto r = pearson(x, y);
    CHECK(r.statistic == doctest::Approx(r_direct).epsilon(1e-12));
    CHECK(r.tail == TestTail::kTwoSided);
    CHECK(r.p_value >= 0.0);
    CHECK(r.p_value <= 1.0);
  }
}

TEST_CASE("report summary covers only defined targets") {
  MetricsReport report;
  report.targets["a"].auc = 0.8;
  report.targets["a"].n_pos = 10;
  report.targets["a"].n_neg = 10;
  report.targets["b"].auc = 0.6;
  report.targets["b"].n_pos = 5;
  report.targets["b"].n_neg = 15;
  report.targets["dead"].n_pos = 0;
  report.targets["dead"].n_neg = 20;
  report.finalize_summary();
  CHECK(report.mean_auc == doctest::Approx(0.7));
  CHECK(report.sd_auc ==
        doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));  // sample sd
  const auto json = report.to_json();
  const auto back = MetricsReport::from_json(json);
  CHECK(back.to_json() == json);
  CHECK_FALSE(back.targets.at("dead").auc.has_value());
}

TEST_CASE("compare_reports pairs shared targets and runs the test") {
  MetricsReport a, b;
  const std::vector<double> auc_a{0.9, 0.8, 0.75, 0.7};
  const std::vector<double> auc_b{0.85, 0.7, 0.72, 0.69};
  for (int i = 0; i < 4; ++i) {
    const auto id = "t" + std::to_string(i);
    a.targets[id].auc = auc_a[i];
    b.targets[id].auc = auc_b[i];
  }
  a.targets["only_a"].auc = 0.5;
  b.targets["undef"].n_pos = 0;
  const auto cmp = compare_reports(a, b, CompareTest::kPairedT);
  CHECK(cmp.target_ids.size() == 4);
  CHECK_FALSE(cmp.identical);
  CHECK(cmp.test.n == 4);
  for (int i = 0; i < 4; ++i)
    CHECK(cmp.deltas[i] == doctest::Approx(auc_a[i] - auc_b[i]));

  std::map<std::string, double> prev{
      {"t0", 0.4}, {"t1", 0.05}, {"t2", 0.2}, {"t3", 0.3}};
  const auto with_prev = compare_reports(a, b, CompareTest::kWilcoxon, &prev);
  REQUIRE(with_prev.gain_vs_prevalence.has_value());
  CHECK(with_prev.gain_vs_prevalence->method == TestMethod::kPearson);
}

TEST_CASE("identical reports compare as identical instead of failing") {
  MetricsReport a;
  for (int i = 0; i < 3; ++i)
    a.targets["t" + std::to_string(i)].auc = 0.6 + 0.1 * i;
  const auto cmp = compare_reports(a, a, CompareTest::kPairedT);
  CHECK(cmp.identical);
  const auto json = cmp.to_json();
  CHECK(json.find("identical") != std::string::npos);
}

TEST_CASE("disjoint reports cannot be compared") {
  MetricsReport a, b;
  a.targets["x"].auc = 0.7;
  b.targets["y"].auc = 0.7;
  try {
    compare_reports(a, b, CompareTest::kPairedT);
    FAIL("expected TargetMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TargetMismatch);
  }
}
