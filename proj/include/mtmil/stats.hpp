#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtmil/error.hpp"

namespace mtmil {

struct TargetMetrics {
  std::optional<double> auc;  // undefined when a class is missing
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  std::optional<std::pair<double, double>> ci;
  std::vector<std::pair<double, double>> roc;  // (fpr, tpr) points
};

struct MetricsReport {
  std::map<std::string, TargetMetrics> targets;
  double mean_auc = 0.0;  // over defined targets
  double sd_auc = 0.0;
  void finalize_summary();
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

enum class TestMethod {
  kPairedTOneTailed,
  kWilcoxonExact,
  kWilcoxonNormal,
  kPearson,
};

enum class TestTail { kOneSidedGreater, kTwoSided };

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::int64_t n = 0;
  TestTail tail = TestTail::kOneSidedGreater;
  TestMethod method = TestMethod::kPairedTOneTailed;
};

// Mann-Whitney AUC; ties count one half. Throws UndefinedAUC when either
// class is absent.
double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels);

// ROC points at every distinct threshold, (0,0) to (1,1); the trapezoidal
// area equals roc_auc.
std::vector<std::pair<double, double>> roc_curve(
    const std::vector<double>& scores, const std::vector<int>& labels);

// Central 95% (or `level`) percentile interval of the AUC over B pairwise
// resamples. Single-class resamples are discarded and redrawn, capped at
// 100*B total draws.
std::pair<double, double> bootstrap_auc_interval(
    const std::vector<double>& scores, const std::vector<int>& labels,
    std::int64_t B, double level, std::uint64_t seed);

// One-tailed paired t-test, alternative mean(a - b) > 0.
TestResult paired_t_one_tailed(const std::vector<double>& a,
                               const std::vector<double>& b);

// One-tailed Wilcoxon signed-rank, alternative a > b. Exact enumeration for
// up to 20 nonzero differences, else normal approximation with tie and
// continuity corrections.
TestResult wilcoxon_signed_rank_one_tailed(const std::vector<double>& a,
                                           const std::vector<double>& b);

// Two-sided Pearson correlation test; statistic is r.
TestResult pearson(const std::vector<double>& x, const std::vector<double>& y);

// Student-t CDF via the regularized incomplete beta function.
double student_t_cdf(double t, double dof);
double incomplete_beta(double a, double b, double x);
double normal_cdf(double z);

struct ComparisonResult {
  TestResult test;
  std::vector<std::string> target_ids;         // targets compared
  std::vector<double> auc_a;
  std::vector<double> auc_b;
  std::vector<double> deltas;                  // auc_a - auc_b
  std::vector<std::optional<double>> prevalence;  // aligned, when provided
  std::optional<TestResult> gain_vs_prevalence;  // pearson, when provided
  bool identical = false;  // reports were identical; no test possible
  std::string to_json() const;
};

enum class CompareTest { kPairedT, kWilcoxon };

// Pairs per-target AUCs defined in both reports and runs the chosen paired
// test on (a, b). When prevalences are given, also correlates the deltas
// against them.
ComparisonResult compare_reports(
    const MetricsReport& a, const MetricsReport& b, CompareTest test,
    const std::map<std::string, double>* prevalences = nullptr);

}  // namespace mtmil
