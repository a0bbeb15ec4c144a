#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "doctest.h"
#include "mtmil/rng.hpp"
#include "mtmil/splitter.hpp"

using namespace mtmil;

namespace {

CohortManifest tiny_manifest(int n, int n_targets = 1) {
  CohortManifest m;
  for (int t = 0; t < n_targets; ++t)
    m.target_ids.push_back("t" + std::to_string(t));
  for (int i = 0; i < n; ++i) {
    ManifestRow row;
    char id[8];
    std::snprintf(id, sizeof(id), "b%02d", i);
    row.bag_id = id;
    row.cohort_id = "c";
    char stamp[16];
    std::snprintf(stamp, sizeof(stamp), "2020-01-%02d", 1 + i % 28);
    row.timestamp = stamp;
    row.scanner = i % 2 ? "s1" : "s2";
    row.tissue_site = "colon";
    row.procedure = "biopsy";
    for (int t = 0; t < n_targets; ++t)
      row.labels.push_back(std::int8_t((i + t) % 2));
    m.rows.push_back(std::move(row));
  }
  return m;
}

}  // namespace

TEST_CASE("subset names round-trip") {
  for (const auto s : {Subset::kDev, Subset::kTemporal, Subset::kExternal})
    CHECK(parse_subset(subset_name(s)) == s);
  CHECK_THROWS_AS(parse_subset("bogus"), Error);
}

TEST_CASE("carve_holdouts sends external stains out and recent bags to temporal") {
  auto m = tiny_manifest(10);
  m.rows[3].stain_origin = StainOrigin::kExternal;
  m.rows[7].stain_origin = StainOrigin::kExternal;
  // 8 internal bags, fraction 0.25 -> ceil(2) most recent are temporal.
  const auto split = carve_holdouts(m, 0.25);
  CHECK(split.bags_in_subset(Subset::kExternal) ==
        std::vector<std::string>{m.rows[3].bag_id, m.rows[7].bag_id});
  const auto temporal = split.bags_in_subset(Subset::kTemporal);
  REQUIRE(temporal.size() == 2);
  // Internal timestamps peak at rows 8 and 9 (2020-01-09, 2020-01-10).
  CHECK(std::set<std::string>(temporal.begin(), temporal.end()) ==
        std::set<std::string>{m.rows[8].bag_id, m.rows[9].bag_id});
  CHECK(split.bags_in_subset(Subset::kDev).size() == 6);
}

TEST_CASE("carve_holdouts breaks timestamp ties by smaller bag_id staying dev") {
  CohortManifest m = tiny_manifest(3);
  for (auto& row : m.rows) row.timestamp = "2020-06-01";
  // One of three goes temporal; the tie breaks toward the smaller bag_id.
  const auto split = carve_holdouts(m, 0.3);
  const auto temporal = split.bags_in_subset(Subset::kTemporal);
  REQUIRE(temporal.size() == 1);
  CHECK(temporal[0] == m.rows[0].bag_id);
}

TEST_CASE("carve_holdouts on an empty manifest is an EmptyCohort error") {
  CohortManifest m;
  m.target_ids = {"t0"};
  CHECK_THROWS_AS(carve_holdouts(m, 0.2), Error);
}

TEST_CASE("stratified folds partition the dev bags") {
  const auto m = tiny_manifest(23);
  auto split = carve_holdouts(m, 0.2);
  const auto dev = split.bags_in_subset(Subset::kDev);
  stratified_kfold(build_strat_labels(m, dev), 5, 17, split);
  std::set<std::string> seen;
  for (int f = 0; f < 5; ++f)
    for (const auto& id : split.bags_in_fold(f)) {
      CHECK(seen.insert(id).second);
      CHECK(split.by_bag.at(id).subset == Subset::kDev);
    }
  CHECK(seen.size() == dev.size());
  // Fold sizes differ by at most one.
  std::vector<std::size_t> sizes;
  for (int f = 0; f < 5; ++f) sizes.push_back(split.bags_in_fold(f).size());
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  CHECK(*hi - *lo <= 1);
}

TEST_CASE("folds balance positives for a single label") {
  // 10 dev bags, 5 positive, k=5: every fold must get exactly one positive.
  CohortManifest m = tiny_manifest(10);
  for (int i = 0; i < 10; ++i) m.rows[i].labels[0] = i < 5 ? 1 : 0;
  auto split = carve_holdouts(m, 0.0);
  const auto dev = split.bags_in_subset(Subset::kDev);
  REQUIRE(dev.size() == 10);
  stratified_kfold(build_strat_labels(m, dev), 5, 3, split);
  for (int f = 0; f < 5; ++f) {
    int pos = 0;
    for (const auto& id : split.bags_in_fold(f))
      pos += m.find(id)->labels[0] == 1;
    CHECK(pos == 1);
  }
}

TEST_CASE("stratification is deterministic and row-order invariant") {
  const auto m = tiny_manifest(29, 2);
  auto shuffled = m;
  Rng rng(99);
  const auto perm = rng.permutation(29);
  for (int i = 0; i < 29; ++i) shuffled.rows[i] = m.rows[perm[i]];

  auto run = [](const CohortManifest& manifest) {
    auto split = carve_holdouts(manifest, 0.15);
    stratified_kfold(
        build_strat_labels(manifest,
                           split.bags_in_subset(Subset::kDev)),
        4, 11, split);
    return split.to_csv();
  };
  const auto csv = run(m);
  CHECK(csv == run(m));
  CHECK(csv == run(shuffled));
}

TEST_CASE("split CSV round-trips") {
  const auto m = tiny_manifest(15);
  auto split = carve_holdouts(m, 0.2);
  stratified_kfold(build_strat_labels(m, split.bags_in_subset(Subset::kDev)),
                   3, 7, split);
  const auto csv = split.to_csv();
  const auto back = SplitAssignment::from_csv(csv);
  CHECK(back.to_csv() == csv);
  CHECK_THROWS_AS(SplitAssignment::from_csv("wrong,header\n"), Error);
}

TEST_CASE("infeasible fold counts are rejected") {
  const auto m = tiny_manifest(6);
  auto split = carve_holdouts(m, 0.0);
  const auto labels = build_strat_labels(m, split.bags_in_subset(Subset::kDev));
  CHECK_THROWS_AS(stratified_kfold(labels, 1, 0, split), Error);
  try {
    stratified_kfold(labels, 7, 0, split);
    FAIL("expected InfeasibleSplit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InfeasibleSplit);
  }
}

TEST_CASE("fold roles rotate selection next to test") {
  const auto m = tiny_manifest(20);
  auto split = carve_holdouts(m, 0.0);
  stratified_kfold(build_strat_labels(m, split.bags_in_subset(Subset::kDev)),
                   5, 1, split);
  for (int test = 0; test < 5; ++test) {
    const auto roles = fold_roles(split, test);
    CHECK(roles.test_fold == test);
    CHECK(roles.selection_fold == (test + 1) % 5);
    CHECK(roles.train_folds.size() == 3);
    for (const int f : roles.train_folds) {
      CHECK(f != roles.test_fold);
      CHECK(f != roles.selection_fold);
    }
  }
  CHECK_THROWS_AS(fold_roles(split, 9), Error);

  auto small = carve_holdouts(m, 0.0);
  stratified_kfold(build_strat_labels(m, small.bags_in_subset(Subset::kDev)),
                   2, 1, small);
  try {
    fold_roles(small, 0);
    FAIL("expected InfeasibleRoles");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InfeasibleRoles);
  }
}

TEST_CASE("strat labels include one-hot metadata columns") {
  const auto m = tiny_manifest(8);
  auto split = carve_holdouts(m, 0.0);
  const auto labels = build_strat_labels(m, split.bags_in_subset(Subset::kDev));
  REQUIRE(labels.bag_ids.size() == 8);
  // 1 target + scanner{s1,s2} + site{colon} + procedure{biopsy}
  CHECK(labels.label_ids.size() == 5);
  for (const auto& row : labels.rows) CHECK(row.size() == labels.label_ids.size());
}
