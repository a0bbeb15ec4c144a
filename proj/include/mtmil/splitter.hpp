#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtmil/feature_store.hpp"

namespace mtmil {

enum class Subset { kDev, kTemporal, kExternal };

const char* subset_name(Subset s);
Subset parse_subset(const std::string& name);

struct SplitAssignment {
  struct Entry {
    Subset subset = Subset::kDev;
    std::optional<int> fold;  // present iff subset == dev
  };
  std::map<std::string, Entry> by_bag;
  int k = 5;
  std::uint64_t seed = 0;

  std::vector<std::string> bags_in_subset(Subset s) const;
  std::vector<std::string> bags_in_fold(int fold) const;

  std::string to_csv() const;
  static SplitAssignment from_csv(const std::string& csv);
};

// Externally stained bags -> external subset; of the rest, the
// ceil(temporal_fraction * n) most recent -> temporal; remainder -> dev.
// Timestamp ties break toward the lexicographically smaller bag_id.
SplitAssignment carve_holdouts(const CohortManifest& manifest,
                               double temporal_fraction = 0.20);

// Binary stratification matrix: target labels (NA as 0) plus one-hot
// indicators for scanner, tissue_site, and procedure.
struct StratLabels {
  std::vector<std::string> label_ids;
  std::vector<std::string> bag_ids;
  std::vector<std::vector<std::uint8_t>> rows;  // bag x label
};

StratLabels build_strat_labels(const CohortManifest& manifest,
                               const std::vector<std::string>& dev_bags);

// Iterative stratification over the dev bags; fills fold assignments
// in-place on `assignment`. Deterministic given seed and invariant to the
// order of strat_labels rows.
void stratified_kfold(const StratLabels& strat_labels, int k,
                      std::uint64_t seed, SplitAssignment& assignment);

struct FoldRoles {
  std::vector<int> train_folds;
  int selection_fold;
  int test_fold;
};

// Fixed rotation: selection = (test + 1) mod k, train = the rest.
FoldRoles fold_roles(const SplitAssignment& assignment, int test_fold);

}  // namespace mtmil
