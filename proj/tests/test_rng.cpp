#include <doctest.h>

#include <cmath>
#include <set>

#include "mvlab/errors.hpp"
#include "mvlab/rng.hpp"

using namespace mvlab;

TEST_CASE("rng is reproducible from its seed") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(43);
  CHECK(Rng(42).next_u64() != c.next_u64());
}

TEST_CASE("uniform01 lies in [0,1) and has sane mean") {
  Rng r(7);
  double total = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    total += u;
  }
  CHECK(std::abs(total / n - 0.5) < 0.01);
}

TEST_CASE("uniform_int covers its range without bias") {
  Rng r(11);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[r.uniform_int(7)];
  for (int c : counts) CHECK(std::abs(c - n / 7) < 500);
  CHECK_THROWS_AS(r.uniform_int(0), InvalidParameterError);
}

TEST_CASE("normal moments match the standard normal") {
  Rng r(13);
  double m1 = 0.0, m2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    m1 += x;
    m2 += x * x;
  }
  m1 /= n;
  m2 /= n;
  CHECK(std::abs(m1) < 0.01);
  CHECK(std::abs(m2 - 1.0) < 0.02);
}

TEST_CASE("dirichlet weights are positive and sum to 1") {
  Rng r(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto w = r.dirichlet_uniform(5);
    double total = 0.0;
    for (double x : w) {
      REQUIRE(x > 0.0);
      total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("permutation is a permutation and epoch seeds differ") {
  Rng r(19);
  const auto p = r.permutation(100);
  std::set<std::size_t> seen(p.begin(), p.end());
  CHECK(seen.size() == 100);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 99);

  const auto p0 = Rng(derive_seed(5, 0)).permutation(50);
  const auto p1 = Rng(derive_seed(5, 1)).permutation(50);
  CHECK(p0 != p1);
  CHECK(Rng(derive_seed(5, 0)).permutation(50) == p0);
}

TEST_CASE("derived seeds behave as independent streams") {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t base : {1ULL, 2ULL, 999ULL})
    for (std::uint64_t key = 0; key < 100; ++key) seeds.insert(derive_seed(base, key));
  CHECK(seeds.size() == 300);
}
