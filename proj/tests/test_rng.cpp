#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <vector>

#include "kinnet/rng.hpp"

using namespace kinnet;

TEST_CASE("same seed reproduces the stream exactly", "[rng]") {
  Rng a(2024), b(2024);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds and streams diverge", "[rng]") {
  Rng a(1), b(2), c(1, 1);
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 64; ++i) {
    const auto x = a.next_u64();
    if (x == b.next_u64()) ++same_ab;
    Rng probe(1, 1);
  }
  Rng a2(1);
  for (int i = 0; i < 64; ++i)
    if (a2.next_u64() == c.next_u64()) ++same_ac;
  CHECK(same_ab == 0);
  CHECK(same_ac == 0);
}

TEST_CASE("uniform01 stays in [0,1) and covers the range", "[rng]") {
  Rng rng(77);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  CHECK(lo < 0.001);
  CHECK(hi > 0.999);
  CHECK(sum / n > 0.49);
  CHECK(sum / n < 0.51);
}

TEST_CASE("below is in range and unbiased enough", "[rng]") {
  Rng rng(5);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = rng.below(7);
    REQUIRE(v < 7);
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int c : counts) {
    CHECK(c > 9000);
    CHECK(c < 11000);
  }
  CHECK(rng.below(0) == 0);
  CHECK(rng.below(1) == 0);
}

TEST_CASE("shuffle permutes without loss and is seed-stable", "[rng]") {
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  Rng rng(31);
  rng.shuffle(v);
  auto w = v;
  std::sort(w.begin(), w.end());
  for (int i = 0; i < 100; ++i) REQUIRE(w[static_cast<std::size_t>(i)] == i);
  CHECK(v != w);  // astronomically unlikely to be identity

  std::vector<int> v2(100);
  for (int i = 0; i < 100; ++i) v2[i] = i;
  Rng rng2(31);
  rng2.shuffle(v2);
  CHECK(v == v2);
}
