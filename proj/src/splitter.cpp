#include "mtmil/splitter.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "mtmil/rng.hpp"

namespace mtmil {

namespace {
constexpr std::uint64_t kStratTag = 0x5354524154ULL;  // stream tag
}

const char* subset_name(Subset s) {
  switch (s) {
    case Subset::kDev: return "dev";
    case Subset::kTemporal: return "temporal";
    case Subset::kExternal: return "external";
  }
  return "?";
}

Subset parse_subset(const std::string& name) {
  if (name == "dev") return Subset::kDev;
  if (name == "temporal") return Subset::kTemporal;
  if (name == "external") return Subset::kExternal;
  throw Error(ErrorCode::ConfigError, "unknown subset: " + name);
}

std::vector<std::string> SplitAssignment::bags_in_subset(Subset s) const {
  std::vector<std::string> out;
  for (const auto& [id, entry] : by_bag)
    if (entry.subset == s) out.push_back(id);
  return out;
}

std::vector<std::string> SplitAssignment::bags_in_fold(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, entry] : by_bag)
    if (entry.fold && *entry.fold == fold) out.push_back(id);
  return out;
}

std::string SplitAssignment::to_csv() const {
  std::ostringstream out;
  out << "bag_id,subset,fold\n";
  for (const auto& [id, entry] : by_bag) {
    out << id << ',' << subset_name(entry.subset) << ',';
    if (entry.fold) out << *entry.fold;
    out << '\n';
  }
  return out.str();
}

SplitAssignment SplitAssignment::from_csv(const std::string& csv) {
  SplitAssignment out;
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) ||
      (line != "bag_id,subset,fold" && line != "bag_id,subset,fold\r"))
    throw Error(ErrorCode::FormatError, "bad split file header");
  int max_fold = -1;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw Error(ErrorCode::FormatError, "bad split row: " + line);
    Entry entry;
    entry.subset = parse_subset(line.substr(c1 + 1, c2 - c1 - 1));
    const auto fold_cell = line.substr(c2 + 1);
    if (!fold_cell.empty()) {
      entry.fold = std::stoi(fold_cell);
      max_fold = std::max(max_fold, *entry.fold);
    } else if (entry.subset == Subset::kDev) {
      throw Error(ErrorCode::FormatError,
                  "dev bag without fold: " + line.substr(0, c1));
    }
    out.by_bag.emplace(line.substr(0, c1), entry);
  }
  if (max_fold >= 0) out.k = max_fold + 1;
  return out;
}

SplitAssignment carve_holdouts(const CohortManifest& manifest,
                               double temporal_fraction) {
  manifest.validate();
  if (manifest.rows.empty())
    throw Error(ErrorCode::EmptyCohort, "manifest has no rows");
  if (temporal_fraction < 0.0 || temporal_fraction >= 1.0)
    throw Error(ErrorCode::ConfigError, "temporal_fraction outside [0,1)");

  SplitAssignment out;
  std::vector<const ManifestRow*> internal;
  for (const auto& row : manifest.rows) {
    if (row.timestamp.empty())
      throw Error(ErrorCode::ValidationError,
                  "bag " + row.bag_id + " missing timestamp");
    if (row.stain_origin == StainOrigin::kExternal)
      out.by_bag[row.bag_id] = {Subset::kExternal, std::nullopt};
    else
      internal.push_back(&row);
  }
  // Latest first; boundary ties go to the smaller bag_id.
  std::sort(internal.begin(), internal.end(),
            [](const ManifestRow* a, const ManifestRow* b) {
              if (a->timestamp != b->timestamp)
                return a->timestamp > b->timestamp;
              return a->bag_id < b->bag_id;
            });
  const auto n_temporal = static_cast<std::size_t>(
      std::ceil(temporal_fraction * double(internal.size())));
  for (std::size_t i = 0; i < internal.size(); ++i) {
    const auto subset = i < n_temporal ? Subset::kTemporal : Subset::kDev;
    out.by_bag[internal[i]->bag_id] = {subset, std::nullopt};
  }
  return out;
}

StratLabels build_strat_labels(const CohortManifest& manifest,
                               const std::vector<std::string>& dev_bags) {
  StratLabels out;
  out.label_ids = manifest.target_ids;
  std::set<std::string> scanners, sites, procedures;
  std::set<std::string> dev_set(dev_bags.begin(), dev_bags.end());
  for (const auto& row : manifest.rows) {
    if (!dev_set.count(row.bag_id)) continue;
    scanners.insert(row.scanner);
    sites.insert(row.tissue_site);
    procedures.insert(row.procedure);
  }
  for (const auto& s : scanners) out.label_ids.push_back("scanner=" + s);
  for (const auto& s : sites) out.label_ids.push_back("tissue_site=" + s);
  for (const auto& s : procedures) out.label_ids.push_back("procedure=" + s);

  for (const auto& row : manifest.rows) {
    if (!dev_set.count(row.bag_id)) continue;
    std::vector<std::uint8_t> indicators;
    for (const auto v : row.labels) indicators.push_back(v == 1 ? 1 : 0);
    for (const auto& s : scanners) indicators.push_back(row.scanner == s);
    for (const auto& s : sites) indicators.push_back(row.tissue_site == s);
    for (const auto& s : procedures) indicators.push_back(row.procedure == s);
    out.bag_ids.push_back(row.bag_id);
    out.rows.push_back(std::move(indicators));
  }
  return out;
}

void stratified_kfold(const StratLabels& strat_labels, int k,
                      std::uint64_t seed, SplitAssignment& assignment) {
  if (k < 2) throw Error(ErrorCode::ConfigError, "k must be >= 2");
  const auto n = strat_labels.bag_ids.size();
  if (static_cast<std::size_t>(k) > n)
    throw Error(ErrorCode::InfeasibleSplit,
                "k exceeds number of dev bags");
  const auto n_labels = strat_labels.label_ids.size();
  for (const auto& row : strat_labels.rows)
    if (row.size() != n_labels)
      throw Error(ErrorCode::ValidationError, "strat label row width mismatch");

  // Canonical bag order: sorted by bag_id. Makes the result invariant to
  // the input row order.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return strat_labels.bag_ids[a] < strat_labels.bag_ids[b];
  });
  // Canonical label order: lexicographic by label id.
  std::vector<std::size_t> label_order(n_labels);
  for (std::size_t j = 0; j < n_labels; ++j) label_order[j] = j;
  std::sort(label_order.begin(), label_order.end(),
            [&](std::size_t a, std::size_t b) {
              return strat_labels.label_ids[a] < strat_labels.label_ids[b];
            });

  std::vector<bool> assigned(n, false);
  std::vector<std::vector<double>> demand(
      n_labels, std::vector<double>(k, 0.0));  // c_{j,f}
  for (std::size_t j = 0; j < n_labels; ++j) {
    double positives = 0;
    for (const auto& row : strat_labels.rows) positives += row[j];
    for (int f = 0; f < k; ++f) demand[j][f] = positives / k;
  }
  std::vector<double> capacity(k, double(n) / k);
  std::vector<bool> label_done(n_labels, false);

  Rng rng(seed, kStratTag);
  const auto pick_fold = [&](const std::vector<double>* label_demand) {
    // argmax over folds of demand (if given), then capacity, then a draw.
    std::vector<int> best;
    for (int f = 0; f < k; ++f) {
      if (best.empty()) {
        best.push_back(f);
        continue;
      }
      const int b = best.front();
      if (label_demand) {
        if ((*label_demand)[f] > (*label_demand)[b] + 1e-12) {
          best = {f};
          continue;
        }
        if ((*label_demand)[f] < (*label_demand)[b] - 1e-12) continue;
      }
      if (capacity[f] > capacity[b] + 1e-12)
        best = {f};
      else if (capacity[f] >= capacity[b] - 1e-12)
        best.push_back(f);
    }
    if (best.size() == 1) return best.front();
    return best[rng.uniform_index(best.size())];
  };

  const auto assign = [&](std::size_t bag, int fold) {
    assigned[bag] = true;
    capacity[fold] -= 1.0;
    for (std::size_t j = 0; j < n_labels; ++j)
      if (strat_labels.rows[bag][j]) demand[j][fold] -= 1.0;
    assignment.by_bag[strat_labels.bag_ids[bag]] = {Subset::kDev, fold};
  };

  for (;;) {
    // Label with the fewest remaining positive unassigned bags.
    std::size_t pick = n_labels;
    std::size_t pick_count = 0;
    for (const auto j : label_order) {
      if (label_done[j]) continue;
      std::size_t count = 0;
      for (const auto i : order)
        if (!assigned[i] && strat_labels.rows[i][j]) ++count;
      if (count == 0) {
        label_done[j] = true;
        continue;
      }
      if (pick == n_labels || count < pick_count) {
        pick = j;
        pick_count = count;
      }
    }
    if (pick == n_labels) break;
    for (const auto i : order) {
      if (assigned[i] || !strat_labels.rows[i][pick]) continue;
      assign(i, pick_fold(&demand[pick]));
    }
    label_done[pick] = true;
  }
  for (const auto i : order)
    if (!assigned[i]) assign(i, pick_fold(nullptr));

  assignment.k = k;
  assignment.seed = seed;
}

FoldRoles fold_roles(const SplitAssignment& assignment, int test_fold) {
  const int k = assignment.k;
  if (k < 3) throw Error(ErrorCode::InfeasibleRoles, "k must be >= 3");
  if (test_fold < 0 || test_fold >= k)
    throw Error(ErrorCode::ConfigError, "test_fold outside 0..k-1");
  FoldRoles roles;
  roles.test_fold = test_fold;
  roles.selection_fold = (test_fold + 1) % k;
  for (int f = 0; f < k; ++f)
    if (f != roles.test_fold && f != roles.selection_fold)
      roles.train_folds.push_back(f);
  return roles;
}

}  // namespace mtmil
