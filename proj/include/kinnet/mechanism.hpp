#pragma once
#include <cctype>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kinnet/errors.hpp"
#include "kinnet/linalg.hpp"
#include "kinnet/text.hpp"

// Mass-action reaction networks: file grammar, RHS/Jacobian evaluation, and
// the two built-in benchmark mechanisms.

namespace kinnet {

struct Reaction {
  // (species index, stoichiometric coefficient), sorted by index, no zeros
  // on the reactant side; a zero product coefficient is dropped at parse time.
  std::vector<std::pair<int, int>> reactants;
  std::vector<std::pair<int, int>> products;
  double rate_constant = 0.0;

  int reactant_order() const {
    int s = 0;
    for (auto [idx, nu] : reactants) s += nu;
    return s;
  }
  bool operator==(const Reaction&) const = default;
};

struct Mechanism {
  std::vector<std::string> species_names;
  std::vector<Reaction> reactions;
  std::vector<double> initial_concentrations;
  std::pair<double, double> t_span{0.0, 0.0};

  std::size_t species_count() const { return species_names.size(); }

  int species_index(std::string_view name) const {
    for (std::size_t i = 0; i < species_names.size(); ++i)
      if (species_names[i] == name) return static_cast<int>(i);
    return -1;
  }
  bool operator==(const Mechanism&) const = default;
};

struct StateVector {
  double t = 0.0;
  std::vector<double> y;
};

// Per-reaction rates split into species production and consumption totals.
// mass_action_rhs is defined as the difference of these two accumulators, so
// the split and the RHS agree bit-for-bit. Templated over the scalar so the
// same code runs on doubles, dual numbers, and tape variables.
template <class T>
void mass_action_split(const Mechanism& m, std::span<const T> y, std::span<T> omega_plus,
                       std::span<T> omega_minus) {
  const std::size_t n = m.species_count();
  if (y.size() != n || omega_plus.size() != n || omega_minus.size() != n)
    throw dimension_error("state dimension does not match mechanism");
  for (std::size_t i = 0; i < n; ++i) {
    omega_plus[i] = T(0.0);
    omega_minus[i] = T(0.0);
  }
  for (const auto& r : m.reactions) {
    T rate(r.rate_constant);
    for (auto [j, nu] : r.reactants)
      for (int c = 0; c < nu; ++c) rate = rate * y[static_cast<std::size_t>(j)];
    for (auto [j, nu] : r.products) {
      auto& acc = omega_plus[static_cast<std::size_t>(j)];
      acc = (nu == 1) ? acc + rate : acc + static_cast<double>(nu) * rate;
    }
    for (auto [j, nu] : r.reactants) {
      auto& acc = omega_minus[static_cast<std::size_t>(j)];
      acc = (nu == 1) ? acc + rate : acc + static_cast<double>(nu) * rate;
    }
  }
}

template <class T>
std::vector<T> mass_action_rhs(const Mechanism& m, std::span<const T> y) {
  const std::size_t n = m.species_count();
  std::vector<T> plus(n, T(0.0)), minus(n, T(0.0)), out(n, T(0.0));
  mass_action_split<T>(m, y, plus, minus);
  for (std::size_t i = 0; i < n; ++i) out[i] = plus[i] - minus[i];
  return out;
}

inline std::vector<double> mass_action_rhs(const Mechanism& m, const StateVector& s) {
  return mass_action_rhs<double>(m, std::span<const double>(s.y));
}

inline std::pair<std::vector<double>, std::vector<double>> production_consumption_split(
    const Mechanism& m, const StateVector& s) {
  const std::size_t n = m.species_count();
  std::vector<double> plus(n), minus(n);
  mass_action_split<double>(m, std::span<const double>(s.y), plus, minus);
  return {std::move(plus), std::move(minus)};
}

// J_ij = d(dy_i/dt)/dy_j, differentiating each reaction's rate monomial.
inline Matrix mass_action_jacobian(const Mechanism& m, const StateVector& s) {
  const std::size_t n = m.species_count();
  if (s.y.size() != n) throw dimension_error("state dimension does not match mechanism");
  Matrix jac(n, n);
  for (const auto& r : m.reactions) {
    for (auto [l, nul] : r.reactants) {
      // d(rate)/dy_l = k * nul * y_l^(nul-1) * prod_{j != l} y_j^nuj
      double d = r.rate_constant * static_cast<double>(nul);
      for (int c = 0; c < nul - 1; ++c) d *= s.y[static_cast<std::size_t>(l)];
      for (auto [j, nuj] : r.reactants) {
        if (j == l) continue;
        for (int c = 0; c < nuj; ++c) d *= s.y[static_cast<std::size_t>(j)];
      }
      const auto col = static_cast<std::size_t>(l);
      for (auto [i, nu] : r.products)
        jac(static_cast<std::size_t>(i), col) += static_cast<double>(nu) * d;
      for (auto [i, nu] : r.reactants)
        jac(static_cast<std::size_t>(i), col) -= static_cast<double>(nu) * d;
    }
  }
  return jac;
}

namespace detail {

inline bool valid_species_name(std::string_view s) {
  if (s.empty() || !std::isalpha(static_cast<unsigned char>(s[0]))) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  return true;
}

inline std::vector<std::pair<int, int>> parse_reaction_side(std::string_view side,
                                                            const Mechanism& m, bool reactant,
                                                            int line) {
  std::map<int, int> stoich;
  const auto terms = split_char(side, '+');
  if (terms.size() == 1 && trim(terms[0]).empty())
    throw parse_error(std::string("empty ") + (reactant ? "reactant" : "product") + " side", line);
  for (auto term : terms) {
    const auto toks = split_ws(term);
    int coeff = 1;
    std::string_view name;
    if (toks.size() == 1) {
      name = toks[0];
    } else if (toks.size() == 2) {
      const long c = parse_integer(toks[0], line);
      if (c < 0 || (reactant && c < 1))
        throw parse_error("stoichiometric coefficient out of range", line);
      coeff = static_cast<int>(c);
      name = toks[1];
    } else {
      throw parse_error("malformed reaction term '" + std::string(trim(term)) + "'", line);
    }
    if (!valid_species_name(name))
      throw parse_error("invalid species name '" + std::string(name) + "'", line);
    const int idx = m.species_index(name);
    if (idx < 0) throw parse_error("unknown species " + std::string(name), line);
    if (coeff > 0) stoich[idx] += coeff;
  }
  return {stoich.begin(), stoich.end()};
}

inline Reaction parse_reaction_line(std::string_view body, const Mechanism& m, int line) {
  const auto arrow = body.find("->");
  if (arrow == std::string_view::npos) throw parse_error("reaction line has no '->'", line);
  const auto colon = body.rfind(':');
  if (colon == std::string_view::npos || colon < arrow)
    throw parse_error("reaction line has no ': <rate-constant>'", line);
  Reaction r;
  r.reactants = parse_reaction_side(body.substr(0, arrow), m, true, line);
  r.products = parse_reaction_side(body.substr(arrow + 2, colon - arrow - 2), m, false, line);
  r.rate_constant = parse_real(trim(body.substr(colon + 1)), line);
  if (!(r.rate_constant > 0.0)) throw parse_error("rate constant must be positive", line);
  const int order = r.reactant_order();
  if (order < 1 || order > 2)
    throw parse_error("total reactant order must be 1 or 2, got " + std::to_string(order), line);
  return r;
}

}  // namespace detail

inline Mechanism parse_mechanism(std::string_view source_text) {
  Mechanism m;
  bool have_species = false, have_init = false, have_tspan = false;
  int line_no = 0;
  for (auto raw : split_char(source_text, '\n')) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto body = trim(hash == std::string_view::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;

    if (body.starts_with("SPECIES:")) {
      if (have_species) throw parse_error("duplicate SPECIES: line", line_no);
      for (auto tok : split_ws(body.substr(8))) {
        if (!detail::valid_species_name(tok))
          throw parse_error("invalid species name '" + std::string(tok) + "'", line_no);
        if (m.species_index(tok) >= 0)
          throw parse_error("duplicate species " + std::string(tok), line_no);
        m.species_names.emplace_back(tok);
      }
      if (m.species_names.empty()) throw parse_error("SPECIES: line lists no species", line_no);
      have_species = true;
      continue;
    }
    if (body.starts_with("INIT:")) {
      if (!have_species) throw parse_error("INIT: before SPECIES:", line_no);
      if (have_init) throw parse_error("duplicate INIT: line", line_no);
      for (auto tok : split_ws(body.substr(5)))
        m.initial_concentrations.push_back(parse_real(tok, line_no));
      if (m.initial_concentrations.size() != m.species_count())
        throw parse_error("INIT: expects one value per species", line_no);
      for (double v : m.initial_concentrations)
        if (v < 0.0) throw parse_error("negative initial concentration", line_no);
      have_init = true;
      continue;
    }
    if (body.starts_with("TSPAN:")) {
      if (have_tspan) throw parse_error("duplicate TSPAN: line", line_no);
      const auto toks = split_ws(body.substr(6));
      if (toks.size() != 2) throw parse_error("TSPAN: expects two values", line_no);
      m.t_span = {parse_real(toks[0], line_no), parse_real(toks[1], line_no)};
      if (!(m.t_span.first < m.t_span.second))
        throw parse_error("TSPAN: start must be smaller than end", line_no);
      have_tspan = true;
      continue;
    }
    if (body.find("->") != std::string_view::npos) {
      if (!have_species) throw parse_error("reaction before SPECIES:", line_no);
      m.reactions.push_back(detail::parse_reaction_line(body, m, line_no));
      continue;
    }
    throw parse_error("unrecognized line '" + std::string(body) + "'", line_no);
  }
  if (!have_species) throw parse_error("missing SPECIES: line");
  // INIT and TSPAN may be omitted for bare network descriptions.
  if (!have_init) m.initial_concentrations.assign(m.species_count(), 0.0);
  if (!have_tspan) m.t_span = {0.0, 1.0};
  return m;
}

inline std::string serialize_mechanism(const Mechanism& m) {
  std::string out = "SPECIES:";
  for (const auto& name : m.species_names) out += " " + name;
  out += "\nINIT:";
  for (double v : m.initial_concentrations) out += " " + g17(v);
  out += "\nTSPAN: " + g17(m.t_span.first) + " " + g17(m.t_span.second) + "\n";
  auto side = [&](const std::vector<std::pair<int, int>>& terms) {
    std::string s;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (i) s += " + ";
      if (terms[i].second != 1) s += std::to_string(terms[i].second) + " ";
      s += m.species_names[static_cast<std::size_t>(terms[i].first)];
    }
    return s;
  };
  for (const auto& r : m.reactions)
    out += side(r.reactants) + " -> " + side(r.products) + " : " + g17(r.rate_constant) + "\n";
  return out;
}

inline constexpr const char* kRoberSource = R"(# Robertson autocatalytic benchmark, three species.
SPECIES: A B C
INIT: 1 0 0
TSPAN: 0 1e5
A -> B : 0.04
2 B -> B + C : 3e7
B + C -> A + C : 1e4
)";

// Rates, species order, and initial state follow the POLLU air-pollution
// benchmark of Verwer (1994), as circulated in the CWI/Bari test set for
// stiff IVP solvers. Species y1..y20 keep the benchmark's numbering.
inline constexpr const char* kPolluSource = R"(# Air pollution mechanism, 25 reactions / 20 species (Verwer 1994 benchmark).
SPECIES: NO2 NO O3P O3 HO2 OH HCHO CO ALD MEO2 C2O3 CO2 PAN CH3O HNO3 O1D SO2 SO4 NO3 N2O5
INIT: 0 0.2 0 0.04 0 0 0.1 0.3 0.01 0 0 0 0 0 0 0 0.007 0 0 0
TSPAN: 0 60
NO2 -> NO + O3P : 0.35
NO + O3 -> NO2 : 26.6
HO2 + NO -> NO2 + OH : 1.23e4
HCHO -> 2 HO2 + CO : 8.6e-4
HCHO -> CO : 8.2e-4
HCHO + OH -> HO2 + CO : 1.5e4
ALD -> MEO2 + HO2 + CO : 1.3e-4
ALD + OH -> C2O3 : 2.4e4
C2O3 + NO -> NO2 + MEO2 + CO2 : 1.65e4
C2O3 + NO2 -> PAN : 9e3
PAN -> C2O3 + NO2 : 2.2e-2
MEO2 + NO -> CH3O + NO2 : 1.2e4
CH3O -> HCHO + HO2 : 1.88
NO2 + OH -> HNO3 : 1.63e4
O3P -> O3 : 4.8e6
O3 -> O1D : 3.5e-4
O3 -> O3P : 1.75e-2
O1D -> 2 OH : 1e9
O1D -> O3P : 4.44e11
SO2 + OH -> SO4 + HO2 : 1.24e3
NO3 -> NO : 2.1
NO3 -> NO2 + O3P : 5.78
NO2 + O3 -> NO3 : 4.74e-2
NO3 + NO2 -> N2O5 : 1.78e3
N2O5 -> NO3 + NO2 : 3.12
)";

inline Mechanism builtin_rober() { return parse_mechanism(kRoberSource); }
inline Mechanism builtin_pollu() { return parse_mechanism(kPolluSource); }

}  // namespace kinnet
