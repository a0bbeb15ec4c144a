#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "mtmil/rng.hpp"

using mtmil::Rng;

TEST_CASE("same key reproduces the same sequence") {
  Rng a(123, 7, 9);
  Rng b(123, 7, 9);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("streams are independent of creation order") {
  Rng first(5, 1);
  const auto x = first.next_u64();
  Rng other(5, 2);
  (void)other.next_u64();
  Rng again(5, 1);
  CHECK(again.next_u64() == x);
}

TEST_CASE("distinct tags give distinct streams") {
  Rng a(9, 1), b(9, 2), c(10, 1);
  CHECK(a.next_u64() != b.next_u64());
  Rng a2(9, 1);
  CHECK(a2.next_u64() != c.next_u64());
}

TEST_CASE("fold matches the tagged constructor") {
  Rng a(42, 3, 4);
  Rng b(42, 3);
  b.fold(4);
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform stays in [0,1) and is roughly uniform") {
  Rng rng(77);
  double sum = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("uniform_index covers [0,n) without gaps for small n") {
  Rng rng(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 500; ++i) {
    const auto v = rng.uniform_index(7);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("normal has the right first two moments") {
  Rng rng(11);
  const int n = 50000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(mean == doctest::Approx(0.0).epsilon(1.0).scale(0.02));
  CHECK(var == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("beta mean matches alpha/(alpha+beta)") {
  Rng rng(19);
  const double alpha = 3.0, beta = 7.0;
  const int n = 20000;
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.beta(alpha, beta);
    REQUIRE(x >= 0.0);
    REQUIRE(x <= 1.0);
    sum += x;
  }
  CHECK(sum / n == doctest::Approx(alpha / (alpha + beta)).epsilon(0.03));
}

TEST_CASE("gamma mean matches its shape") {
  Rng rng(23);
  for (const double shape : {0.5, 1.0, 4.0}) {
    double sum = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) sum += rng.gamma(shape);
    CHECK(sum / n == doctest::Approx(shape).epsilon(0.05));
  }
}

TEST_CASE("permutation is a permutation and seed-stable") {
  Rng rng(31);
  const auto p = rng.permutation(50);
  std::vector<std::uint32_t> sorted(p);
  std::sort(sorted.begin(), sorted.end());
  for (std::uint32_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
  Rng rng2(31);
  CHECK(rng2.permutation(50) == p);
}

TEST_CASE("sample_without_replacement gives k distinct in-range values") {
  Rng rng(37);
  const auto s = rng.sample_without_replacement(100, 30);
  REQUIRE(s.size() == 30);
  std::set<std::uint32_t> uniq(s.begin(), s.end());
  CHECK(uniq.size() == 30);
  for (const auto v : s) CHECK(v < 100);
  // Asking for more than n clips to n.
  const auto all = rng.sample_without_replacement(5, 9);
  CHECK(all.size() == 5);
}

TEST_CASE("hash_string is stable and collision-free on distinct short ids") {
  CHECK(Rng::hash_string("bag_000001") == Rng::hash_string("bag_000001"));
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i)
    seen.insert(Rng::hash_string("bag_" + std::to_string(i)));
  CHECK(seen.size() == 1000);
}
