// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>

#include "doctest.h"
#include "v2apt/rng.hpp"

using namespace v2apt;

TEST_CASE("same seed gives the same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(43);
  CHECK(Rng(42).next_u64() != c.next_u64());
}

TEST_CASE("split streams are independent of parent position") {
  Rng a(1);
  const auto child1 = a.split("data").next_u64();
  a.next_u64();
  a.next_u64();
  CHECK(a.split("data").next_u64() == child1);
  CHECK(a.split("init").next_u64() != child1);
  CHECK(a.split(std::uint64_t{0}).next_u64() != a.split(std::uint64_t{1}).next_u64());
}

TEST_CASE("cursor resumes a stream exactly") {
  Rng a(7);
  for (int i = 0; i < 13; ++i) a.normal();
  Rng b = Rng::from_cursor(a.cursor());
  for (int i = 0; i < 50; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("distributions stay in range") {
  Rng r(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const auto k = r.below(5);
    CHECK(k < 5);
    seen.insert(k);
  }
  CHECK(seen.size() == 5);
}

TEST_CASE("normal moments") {
  Rng r(12);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(s2 / n - mean * mean - 1.0) < 0.02);
}
