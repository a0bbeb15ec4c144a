#include "mtmil/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "mtmil/parallel.hpp"
#include "mtmil/rng.hpp"

namespace mtmil {

namespace {

using nlohmann::json;

constexpr std::uint64_t kBootstrapTag = 0x424f4f54ULL;  // "BOOT"

void check_auc_inputs(const std::vector<double>& scores,
                      const std::vector<int>& labels, std::int64_t& n_pos,
                      std::int64_t& n_neg) {
  if (scores.size() != labels.size())
    throw Error(ErrorCode::ShapeError, "scores/labels length mismatch");
  n_pos = n_neg = 0;
  for (const int y : labels) {
    if (y == 1)
      ++n_pos;
    else if (y == 0)
      ++n_neg;
    else
      throw Error(ErrorCode::ValidationError, "labels must be 0/1");
  }
  if (n_pos == 0 || n_neg == 0)
    throw Error(ErrorCode::UndefinedAUC,
                "AUC needs at least one positive and one negative");
}

// Midranks (1-based) of the values; tied groups share the average rank.
std::vector<double> midranks(const std::vector<double>& values) {
  const auto n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * double(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels) {
  std::int64_t n_pos, n_neg;
  check_auc_inputs(scores, labels, n_pos, n_neg);
  const auto ranks = midranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (labels[i] == 1) rank_sum += ranks[i];
  const double u = rank_sum - 0.5 * double(n_pos) * double(n_pos + 1);
  return u / (double(n_pos) * double(n_neg));
}

std::vector<std::pair<double, double>> roc_curve(
    const std::vector<double>& scores, const std::vector<int>& labels) {
  std::int64_t n_pos, n_neg;
  check_auc_inputs(scores, labels, n_pos, n_neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<std::pair<double, double>> points{{0.0, 0.0}};
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           scores[order[j + 1]] == scores[order[i]])
      ++j;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1)
        ++tp;
      else
        ++fp;
    }
    points.emplace_back(double(fp) / double(n_neg), double(tp) / double(n_pos));
    i = j + 1;
  }
  return points;
}

std::pair<double, double> bootstrap_auc_interval(
    const std::vector<double>& scores, const std::vector<int>& labels,
    std::int64_t B, double level, std::uint64_t seed) {
  std::int64_t n_pos, n_neg;
  check_auc_inputs(scores, labels, n_pos, n_neg);
  if (B < 1) throw Error(ErrorCode::ConfigError, "B must be >= 1");
  if (level <= 0.0 || level >= 1.0)
    throw Error(ErrorCode::ConfigError, "level outside (0,1)");
  const auto n = scores.size();
  // Draw cap per replicate keeps the total at 100*B regardless of the
  // parallel schedule.
  const int per_replicate_cap = 100;
  std::vector<double> aucs(static_cast<std::size_t>(B));
  std::vector<char> failed(static_cast<std::size_t>(B), 0);
  parallel_for(static_cast<std::size_t>(B), [&](std::size_t rep) {
    const auto r = static_cast<std::int64_t>(rep);
    Rng rng(seed, kBootstrapTag, static_cast<std::uint64_t>(r));
    bool done = false;
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (int attempt = 0; attempt < per_replicate_cap && !done; ++attempt) {
      std::int64_t pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto j = rng.uniform_index(n);
        s[i] = scores[j];
        l[i] = labels[j];
        pos += l[i];
      }
      if (pos == 0 || pos == static_cast<std::int64_t>(n)) continue;
      aucs[static_cast<std::size_t>(r)] = roc_auc(s, l);
      done = true;
    }
    if (!done) failed[static_cast<std::size_t>(r)] = 1;
  });
  for (const char f : failed)
    if (f)
      throw Error(ErrorCode::DegenerateBootstrap,
                  "bootstrap redraw cap exceeded");
  std::sort(aucs.begin(), aucs.end());
  // Nearest-rank percentiles of the central interval.
  const double alpha = (1.0 - level) / 2.0;
  auto nearest_rank = [&](double q) {
    auto rank = static_cast<std::int64_t>(std::ceil(q * double(B)));
    rank = std::clamp<std::int64_t>(rank, 1, B);
    return aucs[static_cast<std::size_t>(rank - 1)];
  };
  return {nearest_rank(alpha), nearest_rank(1.0 - alpha)};
}

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // Continued fraction (Lentz); use the symmetry for fast convergence.
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log(1.0 - x);
  if (x > (a + 1.0) / (a + b + 2.0))
    return 1.0 - incomplete_beta(b, a, 1.0 - x);
  const double tiny = 1e-300;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double result = d;
  for (int m = 1; m <= 500; ++m) {
    const double dm = m;
    double num = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    result *= d * c;
    num = -(a + dm) * (a + b + dm) * x /
          ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    result *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return std::exp(ln_front) * result / a;
}

double student_t_cdf(double t, double dof) {
  if (dof <= 0.0)
    throw Error(ErrorCode::TooFew, "degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = dof / (dof + t * t);
  const double half_tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x);
  return t >= 0.0 ? 1.0 - half_tail : half_tail;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

TestResult paired_t_one_tailed(const std::vector<double>& a,
                               const std::vector<double>& b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::ShapeError, "paired samples differ in length");
  const auto n = a.size();
  if (n < 2) throw Error(ErrorCode::TooFew, "need at least 2 pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / double(n);
  double ss = 0.0;
  for (const double v : d) ss += (v - mean) * (v - mean);
  if (ss == 0.0)
    throw Error(ErrorCode::ZeroVariance, "all paired differences identical");
  const double sd = std::sqrt(ss / double(n - 1));
  TestResult result;
  result.statistic = mean / (sd / std::sqrt(double(n)));
  result.p_value = 1.0 - student_t_cdf(result.statistic, double(n - 1));
  result.n = static_cast<std::int64_t>(n);
  result.tail = TestTail::kOneSidedGreater;
  result.method = TestMethod::kPairedTOneTailed;
  return result;
}

TestResult wilcoxon_signed_rank_one_tailed(const std::vector<double>& a,
                                           const std::vector<double>& b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::ShapeError, "paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double v = a[i] - b[i];
    if (v != 0.0) d.push_back(v);
  }
  if (d.empty())
    throw Error(ErrorCode::AllZero, "all paired differences are zero");
  const auto m = d.size();
  std::vector<double> abs_d(m);
  for (std::size_t i = 0; i < m; ++i) abs_d[i] = std::abs(d[i]);
  const auto ranks = midranks(abs_d);
  double w_plus = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (d[i] > 0.0) w_plus += ranks[i];

  TestResult result;
  result.statistic = w_plus;
  result.n = static_cast<std::int64_t>(m);
  result.tail = TestTail::kOneSidedGreater;

  if (m <= 20) {
    // Exact null distribution. Doubled midranks are integers, so a count
    // array over doubled rank sums enumerates all 2^m sign patterns.
    std::vector<std::int64_t> ranks2(m);
    std::int64_t total2 = 0;
    for (std::size_t i = 0; i < m; ++i) {
      ranks2[i] = static_cast<std::int64_t>(std::llround(2.0 * ranks[i]));
      total2 += ranks2[i];
    }
    std::vector<double> count(static_cast<std::size_t>(total2 + 1), 0.0);
    count[0] = 1.0;
    for (const auto r2 : ranks2)
      for (std::int64_t s = total2; s >= r2; --s)
        count[static_cast<std::size_t>(s)] +=
            count[static_cast<std::size_t>(s - r2)];
    const auto w2 =
        static_cast<std::int64_t>(std::llround(2.0 * w_plus));
    double tail_count = 0.0;
    for (std::int64_t s = w2; s <= total2; ++s)
      tail_count += count[static_cast<std::size_t>(s)];
    result.p_value = tail_count / std::pow(2.0, double(m));
    result.method = TestMethod::kWilcoxonExact;
  } else {
    const double dm = double(m);
    const double mean = dm * (dm + 1.0) / 4.0;
    double tie_term = 0.0;
    std::vector<double> sorted_abs = abs_d;
    std::sort(sorted_abs.begin(), sorted_abs.end());
    std::size_t i = 0;
    while (i < m) {
      std::size_t j = i;
      while (j + 1 < m && sorted_abs[j + 1] == sorted_abs[i]) ++j;
      const double t = double(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
    const double var =
        dm * (dm + 1.0) * (2.0 * dm + 1.0) / 24.0 - tie_term / 48.0;
    const double z = (w_plus - mean - 0.5) / std::sqrt(var);
    result.p_value = 1.0 - normal_cdf(z);
    result.method = TestMethod::kWilcoxonNormal;
  }
  return result;
}

TestResult pearson(const std::vector<double>& x,
                   const std::vector<double>& y) {
  if (x.size() != y.size())
    throw Error(ErrorCode::ShapeError, "samples differ in length");
  const auto n = x.size();
  if (n < 3) throw Error(ErrorCode::TooFew, "need at least 3 observations");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / double(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / double(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw Error(ErrorCode::ZeroVariance, "constant input to pearson");
  const double r = sxy / std::sqrt(sxx * syy);
  TestResult result;
  result.statistic = r;
  result.n = static_cast<std::int64_t>(n);
  result.tail = TestTail::kTwoSided;
  result.method = TestMethod::kPearson;
  const double r2 = std::min(r * r, 1.0);
  if (r2 >= 1.0) {
    result.p_value = 0.0;
  } else {
    const double t = r * std::sqrt(double(n - 2) / (1.0 - r2));
    result.p_value = 2.0 * (1.0 - student_t_cdf(std::abs(t), double(n - 2)));
  }
  return result;
}

void MetricsReport::finalize_summary() {
  std::vector<double> defined;
  for (const auto& [id, m] : targets)
    if (m.auc) defined.push_back(*m.auc);
  if (defined.empty()) {
    mean_auc = 0.0;
    sd_auc = 0.0;
    return;
  }
  mean_auc = std::accumulate(defined.begin(), defined.end(), 0.0) /
             double(defined.size());
  double ss = 0.0;
  for (const double v : defined) ss += (v - mean_auc) * (v - mean_auc);
  sd_auc =
      defined.size() > 1 ? std::sqrt(ss / double(defined.size() - 1)) : 0.0;
}

std::string MetricsReport::to_json() const {
  json out = json::object();
  for (const auto& [id, m] : targets) {
    json entry;
    if (m.auc)
      entry["auc"] = *m.auc;
    else
      entry["auc"] = nullptr;
    entry["n_pos"] = m.n_pos;
    entry["n_neg"] = m.n_neg;
    if (m.ci) entry["ci"] = {m.ci->first, m.ci->second};
    if (!m.roc.empty()) {
      json curve = json::array();
      for (const auto& [fpr, tpr] : m.roc) curve.push_back({fpr, tpr});
      entry["roc"] = curve;
    }
    out[id] = entry;
  }
  out["summary"] = {{"mean", mean_auc}, {"sd", sd_auc}};
  return out.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  json in;
  try {
    in = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::FormatError, std::string("bad report JSON: ") + e.what());
  }
  MetricsReport report;
  if (!in.is_object() || !in.contains("summary"))
    throw Error(ErrorCode::FormatError, "report JSON missing summary");
  for (const auto& [id, entry] : in.items()) {
    if (id == "summary") continue;
    TargetMetrics m;
    if (entry.contains("auc") && !entry["auc"].is_null())
      m.auc = entry["auc"].get<double>();
    m.n_pos = entry.value("n_pos", 0);
    m.n_neg = entry.value("n_neg", 0);
    if (entry.contains("ci"))
      m.ci = std::make_pair(entry["ci"][0].get<double>(),
                            entry["ci"][1].get<double>());
    if (entry.contains("roc"))
      for (const auto& pt : entry["roc"])
        m.roc.emplace_back(pt[0].get<double>(), pt[1].get<double>());
    report.targets.emplace(id, std::move(m));
  }
  report.finalize_summary();
  return report;
}

std::string ComparisonResult::to_json() const {
  json out;
  switch (test.method) {
    case TestMethod::kPairedTOneTailed: out["test"] = "paired_t"; break;
    case TestMethod::kWilcoxonExact: out["test"] = "wilcoxon_exact"; break;
    case TestMethod::kWilcoxonNormal: out["test"] = "wilcoxon_normal"; break;
    case TestMethod::kPearson: out["test"] = "pearson"; break;
  }
  out["identical"] = identical;
  if (!identical) {
    out["statistic"] = test.statistic;
    out["p"] = test.p_value;
  }
  out["n"] = test.n;
  json deltas_json = json::array();
  for (std::size_t i = 0; i < target_ids.size(); ++i) {
    json entry = {{"target", target_ids[i]},
                  {"auc_a", auc_a[i]},
                  {"auc_b", auc_b[i]},
                  {"delta", deltas[i]}};
    if (i < prevalence.size() && prevalence[i])
      entry["prevalence"] = *prevalence[i];
    deltas_json.push_back(entry);
  }
  out["deltas"] = deltas_json;
  if (gain_vs_prevalence) {
    out["gain_vs_prevalence"] = {{"r", gain_vs_prevalence->statistic},
                                 {"p", gain_vs_prevalence->p_value},
                                 {"n", gain_vs_prevalence->n}};
  }
  return out.dump(2) + "\n";
}

ComparisonResult compare_reports(const MetricsReport& a,
                                 const MetricsReport& b, CompareTest test,
                                 const std::map<std::string, double>* prevalences) {
  ComparisonResult result;
  for (const auto& [id, metrics] : a.targets) {
    const auto it = b.targets.find(id);
    if (it == b.targets.end()) continue;
    if (!metrics.auc || !it->second.auc) continue;
    result.target_ids.push_back(id);
    result.auc_a.push_back(*metrics.auc);
    result.auc_b.push_back(*it->second.auc);
    result.deltas.push_back(*metrics.auc - *it->second.auc);
  }
  const auto& auc_a = result.auc_a;
  const auto& auc_b = result.auc_b;
  if (result.target_ids.empty())
    throw Error(ErrorCode::TargetMismatch,
                "no target with a defined AUC in both reports");
  result.test.n = static_cast<std::int64_t>(result.target_ids.size());
  try {
    result.test = test == CompareTest::kPairedT
                      ? paired_t_one_tailed(auc_a, auc_b)
                      : wilcoxon_signed_rank_one_tailed(auc_a, auc_b);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ZeroVariance && e.code() != ErrorCode::AllZero)
      throw;
    result.identical = true;
    result.test.method = test == CompareTest::kPairedT
                             ? TestMethod::kPairedTOneTailed
                             : TestMethod::kWilcoxonExact;
    result.test.n = static_cast<std::int64_t>(result.target_ids.size());
  }
  if (prevalences) {
    std::vector<double> gain, prev;
    for (std::size_t i = 0; i < result.target_ids.size(); ++i) {
      const auto it = prevalences->find(result.target_ids[i]);
      if (it == prevalences->end()) {
        result.prevalence.emplace_back(std::nullopt);
        continue;
      }
      result.prevalence.emplace_back(it->second);
      gain.push_back(result.deltas[i]);
      prev.push_back(it->second);
    }
    if (gain.size() >= 3) result.gain_vs_prevalence = pearson(gain, prev);
  }
  return result;
}

}  // namespace mtmil
