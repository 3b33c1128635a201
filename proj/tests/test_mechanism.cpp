#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "kinnet/mechanism.hpp"
#include "kinnet/rng.hpp"

using Catch::Approx;
using namespace kinnet;

namespace {

StateVector random_state(const Mechanism& m, Rng& rng, double scale = 1.0) {
  StateVector s;
  s.t = 0.0;
  s.y.resize(m.species_count());
  for (auto& v : s.y) v = scale * rng.uniform01();
  return s;
}

Matrix fd_jacobian(const Mechanism& m, const StateVector& s) {
  const std::size_t n = m.species_count();
  Matrix j(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    const double h = 1e-6 * std::max(std::abs(s.y[col]), 1e-3);
    StateVector lo = s, hi = s;
    lo.y[col] -= h;
    hi.y[col] += h;
    const auto flo = mass_action_rhs(m, lo);
    const auto fhi = mass_action_rhs(m, hi);
    for (std::size_t row = 0; row < n; ++row) j(row, col) = (fhi[row] - flo[row]) / (2.0 * h);
  }
  return j;
}

}  // namespace

TEST_CASE("minimal sources parse", "[mechanism]") {
  SECTION("species plus one reaction") {
    auto m = parse_mechanism("SPECIES: A B C\nA -> B : 0.04");
    REQUIRE(m.species_count() == 3);
    REQUIRE(m.reactions.size() == 1);
    CHECK(m.reactions[0].rate_constant == 0.04);
    CHECK(m.reactions[0].reactants == std::vector<std::pair<int, int>>{{0, 1}});
    CHECK(m.reactions[0].products == std::vector<std::pair<int, int>>{{1, 1}});
  }
  SECTION("species alone gives a zero RHS") {
    auto m = parse_mechanism("SPECIES: A\n");
    REQUIRE(m.species_count() == 1);
    CHECK(m.reactions.empty());
    StateVector s{0.0, {0.7}};
    CHECK(mass_action_rhs(m, s)[0] == 0.0);
  }
}

TEST_CASE("parse errors carry line numbers", "[mechanism]") {
  SECTION("unknown species") {
    try {
      parse_mechanism("SPECIES: A\nB -> A : 1.0");
      FAIL("expected parse_error");
    } catch (const parse_error& e) {
      CHECK(e.line == 2);
      CHECK(std::string(e.what()).find("unknown species B") != std::string::npos);
    }
  }
  SECTION("bad rate constant") {
    CHECK_THROWS_AS(parse_mechanism("SPECIES: A B\nA -> B : 0"), parse_error);
    CHECK_THROWS_AS(parse_mechanism("SPECIES: A B\nA -> B : -2"), parse_error);
    CHECK_THROWS_AS(parse_mechanism("SPECIES: A B\nA -> B : fast"), parse_error);
  }
  SECTION("structural problems") {
    CHECK_THROWS_AS(parse_mechanism(""), parse_error);
    CHECK_THROWS_AS(parse_mechanism("SPECIES: A A\n"), parse_error);
    CHECK_THROWS_AS(parse_mechanism("SPECIES: A B\nA -> B"), parse_error);
    CHECK_THROWS_AS(parse_mechanism("SPECIES: A B\nA + A + A -> B : 1"), parse_error);
    CHECK_THROWS_AS(parse_mechanism("SPECIES: A B\nINIT: 1\n"), parse_error);
    CHECK_THROWS_AS(parse_mechanism("SPECIES: A\nTSPAN: 5 5\n"), parse_error);
    CHECK_THROWS_AS(parse_mechanism("SPECIES: A\nINIT: -1\n"), parse_error);
    CHECK_THROWS_AS(parse_mechanism("SPECIES: A\nwhat is this\n"), parse_error);
    CHECK_THROWS_AS(parse_mechanism("INIT: 1\nSPECIES: A\n"), parse_error);
  }
}

TEST_CASE("comments and blank lines are ignored", "[mechanism]") {
  auto m = parse_mechanism(
      "# header comment\n"
      "SPECIES: A B  # trailing comment\n"
      "\n"
      "INIT: 1 0\n"
      "TSPAN: 0 10\n"
      "A -> B : 2.5  # forward step\n");
  CHECK(m.species_count() == 2);
  CHECK(m.initial_concentrations == std::vector<double>{1.0, 0.0});
  CHECK(m.t_span == std::pair<double, double>{0.0, 10.0});
  REQUIRE(m.reactions.size() == 1);
  CHECK(m.reactions[0].rate_constant == 2.5);
}

TEST_CASE("repeated species within a side merge their coefficients", "[mechanism]") {
  auto m = parse_mechanism("SPECIES: A B\nA + A -> 2 B : 1.0");
  REQUIRE(m.reactions.size() == 1);
  CHECK(m.reactions[0].reactants == std::vector<std::pair<int, int>>{{0, 2}});
  CHECK(m.reactions[0].products == std::vector<std::pair<int, int>>{{1, 2}});
}

TEST_CASE("builtin mechanisms match their published shape", "[mechanism]") {
  auto rober = builtin_rober();
  CHECK(rober.species_count() == 3);
  CHECK(rober.reactions.size() == 3);
  CHECK(rober.t_span == std::pair<double, double>{0.0, 1e5});
  CHECK(rober.initial_concentrations == std::vector<double>{1.0, 0.0, 0.0});

  auto pollu = builtin_pollu();
  CHECK(pollu.species_count() == 20);
  CHECK(pollu.reactions.size() == 25);
  CHECK(pollu.t_span == std::pair<double, double>{0.0, 60.0});
  CHECK(pollu.initial_concentrations[1] == 0.2);
  CHECK(pollu.initial_concentrations[16] == 0.007);
  CHECK(std::accumulate(pollu.initial_concentrations.begin(), pollu.initial_concentrations.end(),
                        0.0) == Approx(0.657));
}

TEST_CASE("three-species RHS values at the initial state", "[mechanism]") {
  auto m = builtin_rober();
  StateVector s{0.0, {1.0, 0.0, 0.0}};
  auto f = mass_action_rhs(m, s);
  CHECK(f[0] == Approx(-0.04).margin(0));
  CHECK(f[1] == Approx(0.04).margin(0));
  CHECK(f[2] == 0.0);

  auto [plus, minus] = production_consumption_split(m, s);
  CHECK(plus == std::vector<double>{0.0, 0.04, 0.0});
  CHECK(minus == std::vector<double>{0.04, 0.0, 0.0});
}

TEST_CASE("split minus equals RHS bitwise and stays nonnegative", "[mechanism]") {
  Rng rng(11);
  for (auto mech : {builtin_rober(), builtin_pollu()}) {
    for (int trial = 0; trial < 50; ++trial) {
      auto s = random_state(mech, rng);
      auto f = mass_action_rhs(mech, s);
      auto [plus, minus] = production_consumption_split(mech, s);
      for (std::size_t i = 0; i < mech.species_count(); ++i) {
        REQUIRE(plus[i] >= 0.0);
        REQUIRE(minus[i] >= 0.0);
        REQUIRE(f[i] == plus[i] - minus[i]);
      }
    }
  }
}

TEST_CASE("three-species RHS components sum to zero", "[mechanism]") {
  auto m = builtin_rober();
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_state(m, rng, 2.0);
    auto f = mass_action_rhs(m, s);
    CHECK(std::abs(f[0] + f[1] + f[2]) < 1e-9 * (std::abs(f[0]) + std::abs(f[1]) + std::abs(f[2]) + 1.0));
  }
}

TEST_CASE("analytic Jacobian agrees with finite differences", "[mechanism]") {
  Rng rng(17);
  for (auto mech : {builtin_rober(), builtin_pollu()}) {
    for (int trial = 0; trial < 100; ++trial) {
      auto s = random_state(mech, rng);
      auto ja = mass_action_jacobian(mech, s);
      auto jf = fd_jacobian(mech, s);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < mech.species_count(); ++i)
        for (std::size_t j = 0; j < mech.species_count(); ++j) {
          num += std::pow(ja(i, j) - jf(i, j), 2);
          den += std::pow(jf(i, j), 2);
        }
      REQUIRE(std::sqrt(num) <= 1e-7 * std::sqrt(den));
    }
  }
}

TEST_CASE("Jacobian at the three-species initial state", "[mechanism]") {
  auto m = builtin_rober();
  auto j = mass_action_jacobian(m, StateVector{0.0, {1.0, 0.0, 0.0}});
  CHECK(j(0, 0) == -0.04);
  CHECK(j(0, 1) == 0.0);
  CHECK(j(0, 2) == 0.0);
  for (std::size_t col = 0; col < 3; ++col)
    CHECK(j(0, col) + j(1, col) + j(2, col) == Approx(0.0).margin(1e-15));
}

TEST_CASE("empty-network Jacobian is zero", "[mechanism]") {
  auto m = parse_mechanism("SPECIES: A B\n");
  auto j = mass_action_jacobian(m, StateVector{0.0, {0.3, 0.4}});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 2; ++k) CHECK(j(i, k) == 0.0);
}

TEST_CASE("mechanism round-trips through its text form", "[mechanism]") {
  for (auto m : {builtin_rober(), builtin_pollu()}) {
    auto again = parse_mechanism(serialize_mechanism(m));
    CHECK(again == m);
  }
  auto odd = parse_mechanism("SPECIES: X Y\nINIT: 0.125 3.5e-9\nTSPAN: 1e-3 7\n2 X -> Y : 1e-30\n");
  CHECK(parse_mechanism(serialize_mechanism(odd)) == odd);
}

TEST_CASE("dimension mismatches are rejected", "[mechanism]") {
  auto m = builtin_rober();
  StateVector bad{0.0, {1.0, 0.0}};
  CHECK_THROWS_AS(mass_action_rhs(m, bad), dimension_error);
  CHECK_THROWS_AS(mass_action_jacobian(m, bad), dimension_error);
  CHECK_THROWS_AS(production_consumption_split(m, bad), dimension_error);
}
