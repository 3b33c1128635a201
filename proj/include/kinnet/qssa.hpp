#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kinnet/errors.hpp"
#include "kinnet/integrate.hpp"
#include "kinnet/linalg.hpp"
#include "kinnet/mechanism.hpp"
#include "kinnet/text.hpp"

// Quasi-steady-state reduction: species partitioning, the algebraic closure
// that replaces the fast species' ODEs, and the reduced right-hand side.

namespace kinnet {

struct QssPartition {
  std::vector<int> qss_indices;      // ascending
  std::vector<int> non_qss_indices;  // ascending complement
  bool operator==(const QssPartition&) const = default;
};

enum class ClosureMode { closed_form_rober, newton };

struct ClosureSolveReport {
  int iterations = 0;
  double final_residual_norm = 0.0;
  bool converged = false;
};

// Warm-start state for Newton closures. One cache per evaluation stream;
// concurrent streams must not share one.
struct ClosureCache {
  std::vector<double> warm;
  bool valid = false;
};

struct ReducedSystem {
  Mechanism base;
  QssPartition partition;
  ClosureMode closure_mode = ClosureMode::newton;
  // Threshold used to select the partition; the Newton cold-start guess is
  // threshold/10 per species.
  double selection_threshold = 1e-4;
  // Per-QSS-slot: set when no reaction consumes the species. Such a species
  // cannot satisfy a production/consumption balance, so its algebraic row is
  // y_i = y_i(0) instead (net rate zero read as a constant concentration).
  std::vector<char> frozen;
  std::vector<double> frozen_values;
  // Rate constants of the Robertson structure, filled in closed-form mode.
  double cf_k1 = 0.0, cf_k2 = 0.0, cf_k3 = 0.0;

  std::size_t qss_count() const { return partition.qss_indices.size(); }
  std::size_t non_qss_count() const { return partition.non_qss_indices.size(); }
};

inline constexpr double kClosureResidualTol = 1e-12;
inline constexpr int kClosureMaxIterations = 50;

// qss = every species whose recorded maximum stays strictly below the
// threshold. The reference must cover the mechanism's time span so late
// maxima are seen.
inline QssPartition select_qss_species(const Mechanism& m, const SolutionTrajectory& reference,
                                       double threshold) {
  if (!(threshold >= 0.0))
    throw config_error("qss threshold must be a nonnegative number");
  const std::size_t n = m.species_count();
  if (reference.states.cols() != n || reference.times.empty())
    throw dimension_error("reference trajectory does not match the mechanism species count");
  const auto [t0, t1] = m.t_span;
  const double slack = 1e-9 * std::max({std::abs(t0), std::abs(t1), 1.0});
  if (reference.times.front() > t0 + slack || reference.times.back() < t1 - slack)
    throw config_error("reference trajectory does not cover the mechanism time span");

  QssPartition p;
  for (std::size_t s = 0; s < n; ++s) {
    double peak = reference.states(0, s);
    for (std::size_t i = 1; i < reference.times.size(); ++i)
      peak = std::max(peak, reference.states(i, s));
    (peak < threshold ? p.qss_indices : p.non_qss_indices).push_back(static_cast<int>(s));
  }
  if (p.non_qss_indices.empty())
    throw config_error("threshold selects every species as QSS; no differential variables remain");
  return p;
}

namespace detail {

inline void validate_partition(const Mechanism& m, const QssPartition& p) {
  const int n = static_cast<int>(m.species_count());
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  auto take = [&](const std::vector<int>& idx) {
    int prev = -1;
    for (int s : idx) {
      if (s < 0 || s >= n) throw config_error("partition index out of range");
      if (s <= prev) throw config_error("partition indices must be strictly ascending");
      if (seen[static_cast<std::size_t>(s)]) throw config_error("partition sets overlap");
      seen[static_cast<std::size_t>(s)] = 1;
      prev = s;
    }
  };
  take(p.qss_indices);
  take(p.non_qss_indices);
  for (char c : seen)
    if (!c) throw config_error("partition does not cover every species");
}

// Match the three-reaction Robertson shape around a single QSS species s:
//   a -> s (k1), 2 s -> s + c (k2), s + c -> a + c (k3).
// Returns false when the mechanism is not of that shape.
inline bool match_rober_structure(const Mechanism& m, int s, double& k1, double& k2, double& k3) {
  if (m.species_count() != 3 || m.reactions.size() != 3 || s < 0 || s > 2) return false;
  using Side = std::vector<std::pair<int, int>>;
  int a = -1, c = -1;
  const Reaction* cat = nullptr;
  for (const auto& r : m.reactions) {
    if (r.reactants.size() == 1 && r.reactants[0].second == 1 && r.reactants[0].first != s &&
        r.products == Side{{s, 1}}) {
      if (a >= 0) return false;
      a = r.reactants[0].first;
      k1 = r.rate_constant;
    } else if (r.reactants == Side{{s, 2}} && r.products.size() == 2 &&
               r.products[0].second == 1 && r.products[1].second == 1) {
      const int other = r.products[0].first == s   ? r.products[1].first
                        : r.products[1].first == s ? r.products[0].first
                                                   : -1;
      if (other < 0 || other == s || c >= 0) return false;
      c = other;
      k2 = r.rate_constant;
    } else {
      if (cat) return false;
      cat = &r;
    }
  }
  if (a < 0 || c < 0 || !cat || a == c || a == s || c == s) return false;
  const Side want_reactants{{std::min(s, c), 1}, {std::max(s, c), 1}};
  const Side want_products{{std::min(a, c), 1}, {std::max(a, c), 1}};
  k3 = cat->rate_constant;
  return cat->reactants == want_reactants && cat->products == want_products;
}

inline std::vector<char> consumed_mask(const Mechanism& m) {
  std::vector<char> mask(m.species_count(), 0);
  for (const auto& r : m.reactions)
    for (auto [idx, nu] : r.reactants) mask[static_cast<std::size_t>(idx)] = 1;
  return mask;
}

}  // namespace detail

inline ReducedSystem make_reduced_system(Mechanism base, QssPartition partition, ClosureMode mode,
                                         double selection_threshold = 1e-4) {
  detail::validate_partition(base, partition);
  if (partition.qss_indices.empty())
    throw config_error("a reduced system needs at least one QSS species");
  ReducedSystem r;
  r.closure_mode = mode;
  r.selection_threshold = selection_threshold;
  const auto consumed = detail::consumed_mask(base);
  for (int s : partition.qss_indices) {
    r.frozen.push_back(consumed[static_cast<std::size_t>(s)] ? 0 : 1);
    r.frozen_values.push_back(base.initial_concentrations[static_cast<std::size_t>(s)]);
  }
  if (mode == ClosureMode::closed_form_rober) {
    if (partition.qss_indices.size() != 1 ||
        !detail::match_rober_structure(base, partition.qss_indices[0], r.cf_k1, r.cf_k2, r.cf_k3))
      throw config_error("closed-form closure requires the Robertson structure with one QSS species");
  }
  r.base = std::move(base);
  r.partition = std::move(partition);
  return r;
}

inline void embed_state(const ReducedSystem& r, std::span<const double> y_non_qss,
                        std::span<const double> y_qss, std::span<double> full) {
  if (y_non_qss.size() != r.non_qss_count() || y_qss.size() != r.qss_count() ||
      full.size() != r.base.species_count())
    throw dimension_error("embed_state buffer sizes do not match the partition");
  for (std::size_t j = 0; j < y_non_qss.size(); ++j)
    full[static_cast<std::size_t>(r.partition.non_qss_indices[j])] = y_non_qss[j];
  for (std::size_t a = 0; a < y_qss.size(); ++a)
    full[static_cast<std::size_t>(r.partition.qss_indices[a])] = y_qss[a];
}

namespace detail {

// Residual of the algebraic system at qss values x, with the non-QSS inputs
// already guarded. Frozen rows read x_i - y_i(0).
inline void closure_residual(const ReducedSystem& r, std::span<const double> guarded_nq,
                             std::span<const double> x, std::span<double> full,
                             std::span<double> plus, std::span<double> minus,
                             std::span<double> g) {
  embed_state(r, guarded_nq, x, full);
  mass_action_split<double>(r.base, full, plus, minus);
  for (std::size_t a = 0; a < r.qss_count(); ++a) {
    const auto s = static_cast<std::size_t>(r.partition.qss_indices[a]);
    g[a] = r.frozen[a] ? x[a] - r.frozen_values[a] : plus[s] - minus[s];
  }
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline std::vector<double> guard_inputs(std::span<const double> y) {
  std::vector<double> g(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) throw numeric_error("closure input is not finite");
    g[i] = std::abs(y[i]);
  }
  return g;
}

}  // namespace detail

inline std::pair<std::vector<double>, ClosureSolveReport> solve_qss_closure(
    const ReducedSystem& r, double t, std::span<const double> y_non_qss,
    ClosureCache* cache = nullptr) {
  (void)t;  // mass-action networks are autonomous
  if (y_non_qss.size() != r.non_qss_count())
    throw dimension_error("closure input size does not match the non-QSS species count");
  const auto guarded = detail::guard_inputs(y_non_qss);
  ClosureSolveReport report;

  if (r.closure_mode == ClosureMode::closed_form_rober) {
    const double a1 = guarded[0], a3 = guarded[1];
    const double disc = r.cf_k3 * r.cf_k3 * a3 * a3 + 4.0 * r.cf_k1 * r.cf_k2 * a1;
    const double y2 = (-r.cf_k3 * a3 + std::sqrt(disc)) / (2.0 * r.cf_k2);
    report.converged = true;
    report.final_residual_norm =
        std::abs(r.cf_k1 * a1 - r.cf_k2 * y2 * y2 - r.cf_k3 * y2 * a3);
    return {{y2}, report};
  }

  const std::size_t nq = r.qss_count();
  const std::size_t n = r.base.species_count();
  std::vector<double> x(nq);
  const double guess =
      r.selection_threshold > 0.0 ? r.selection_threshold / 10.0 : 1e-5;
  if (cache && cache->valid && cache->warm.size() == nq)
    x = cache->warm;
  else
    std::fill(x.begin(), x.end(), guess);
  for (std::size_t a = 0; a < nq; ++a)
    if (r.frozen[a]) x[a] = r.frozen_values[a];

  std::vector<double> full(n), plus(n), minus(n), g(nq), g_trial(nq), x_trial(nq), dx(nq);
  detail::closure_residual(r, guarded, x, full, plus, minus, g);
  double gn = detail::norm2(g);
  Matrix jac_sub(nq, nq);

  while (gn > kClosureResidualTol && report.iterations < kClosureMaxIterations) {
    const Matrix jac_full = mass_action_jacobian(r.base, {t, full});
    for (std::size_t a = 0; a < nq; ++a) {
      const auto qa = static_cast<std::size_t>(r.partition.qss_indices[a]);
      for (std::size_t b = 0; b < nq; ++b) {
        const auto qb = static_cast<std::size_t>(r.partition.qss_indices[b]);
        jac_sub(a, b) = r.frozen[a] ? (a == b ? 1.0 : 0.0) : jac_full(qa, qb);
      }
    }
    const LuFactors lu = lu_factor(jac_sub);
    if (lu.singular) break;
    for (std::size_t a = 0; a < nq; ++a) dx[a] = -g[a];
    lu_solve(lu, std::span<double>(dx));
    ++report.iterations;

    // damped update: halve the step until the residual shrinks, keeping
    // iterates nonnegative throughout
    double lambda = 1.0;
    double gn_trial = gn;
    for (int trial = 0; trial < 12; ++trial) {
      for (std::size_t a = 0; a < nq; ++a) x_trial[a] = std::max(0.0, x[a] + lambda * dx[a]);
      detail::closure_residual(r, guarded, x_trial, full, plus, minus, g_trial);
      gn_trial = detail::norm2(g_trial);
      if (gn_trial < gn) break;
      lambda *= 0.5;
    }
    // `full` already holds (guarded, x_trial) from the last residual call
    x = x_trial;
    g = g_trial;
    gn = gn_trial;
  }

  report.final_residual_norm = gn;
  report.converged = gn <= kClosureResidualTol;
  if (report.converged && cache) {
    cache->warm = x;
    cache->valid = true;
  }
  return {std::move(x), report};
}

inline std::vector<double> reduced_rhs(const ReducedSystem& r, double t,
                                       std::span<const double> y_non_qss,
                                       ClosureCache* cache = nullptr) {
  auto [y_qss, report] = solve_qss_closure(r, t, y_non_qss, cache);
  if (!report.converged)
    throw numeric_error("QSS closure did not converge; reduced RHS undefined at this state");
  const std::size_t n = r.base.species_count();
  std::vector<double> full(n);
  embed_state(r, y_non_qss, y_qss, full);
  const std::vector<double> f = mass_action_rhs<double>(r.base, full);
  std::vector<double> out(r.non_qss_count());
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = f[static_cast<std::size_t>(r.partition.non_qss_indices[j])];
  return out;
}

namespace detail {

inline double guard_slope(double y) { return y < 0.0 ? -1.0 : 1.0; }

// Linearization of the converged closure: factored qss-block of the kinetic
// Jacobian plus the cross block scaled by the input guard's slope. Frozen
// rows become identity rows with a zero cross block, so their sensitivities
// vanish.
struct ClosureLinearization {
  LuFactors lu;
  Matrix cross;  // qss rows, non-qss columns
};

inline ClosureLinearization linearize_closure(const ReducedSystem& r, double t,
                                              std::span<const double> y_non_qss,
                                              std::span<const double> guarded,
                                              std::span<const double> y_qss) {
  const std::size_t nq = r.qss_count();
  const std::size_t nn = r.non_qss_count();
  std::vector<double> full(r.base.species_count());
  embed_state(r, guarded, y_qss, full);
  const Matrix jac_full = mass_action_jacobian(r.base, {t, full});
  Matrix sub(nq, nq);
  ClosureLinearization lin{LuFactors{}, Matrix(nq, nn)};
  for (std::size_t a = 0; a < nq; ++a) {
    const auto qa = static_cast<std::size_t>(r.partition.qss_indices[a]);
    for (std::size_t b = 0; b < nq; ++b) {
      const auto qb = static_cast<std::size_t>(r.partition.qss_indices[b]);
      sub(a, b) = r.frozen[a] ? (a == b ? 1.0 : 0.0) : jac_full(qa, qb);
    }
    for (std::size_t j = 0; j < nn; ++j) {
      const auto nj = static_cast<std::size_t>(r.partition.non_qss_indices[j]);
      lin.cross(a, j) = r.frozen[a] ? 0.0 : jac_full(qa, nj) * guard_slope(y_non_qss[j]);
    }
  }
  lin.lu = lu_factor(std::move(sub));
  if (lin.lu.singular)
    throw numeric_error("singular QSS sub-Jacobian; QSSA invalid at this state");
  return lin;
}

}  // namespace detail

// Directional derivative of the closure output with respect to the non-QSS
// inputs, from the implicit relation g(y_qss, y_non_qss) = 0.
inline std::vector<double> closure_tangent(const ReducedSystem& r, double t,
                                           std::span<const double> y_non_qss,
                                           std::span<const double> direction,
                                           ClosureCache* cache = nullptr) {
  if (direction.size() != r.non_qss_count())
    throw dimension_error("tangent direction size does not match the non-QSS species count");
  auto [y_qss, report] = solve_qss_closure(r, t, y_non_qss, cache);
  if (!report.converged)
    throw numeric_error("QSS closure did not converge; tangent undefined at this state");
  const auto guarded = detail::guard_inputs(y_non_qss);

  if (r.closure_mode == ClosureMode::closed_form_rober) {
    const double a1 = guarded[0], a3 = guarded[1];
    const double disc = r.cf_k3 * r.cf_k3 * a3 * a3 + 4.0 * r.cf_k1 * r.cf_k2 * a1;
    if (disc <= 0.0)
      throw numeric_error("closure tangent undefined where both inputs vanish");
    const double root = std::sqrt(disc);
    const double d_a1 = r.cf_k1 / root;
    const double d_a3 = (-r.cf_k3 + r.cf_k3 * r.cf_k3 * a3 / root) / (2.0 * r.cf_k2);
    return {d_a1 * detail::guard_slope(y_non_qss[0]) * direction[0] +
            d_a3 * detail::guard_slope(y_non_qss[1]) * direction[1]};
  }

  const auto lin = detail::linearize_closure(r, t, y_non_qss, guarded, y_qss);
  std::vector<double> rhs(r.qss_count(), 0.0);
  for (std::size_t a = 0; a < rhs.size(); ++a)
    for (std::size_t j = 0; j < direction.size(); ++j)
      rhs[a] -= lin.cross(a, j) * direction[j];
  lu_solve(lin.lu, std::span<double>(rhs));
  return rhs;
}

// Full sensitivity matrix d(y_qss)/d(y_non_qss) at the converged closure,
// one linear solve per non-QSS column over a shared factorization.
inline Matrix closure_jacobian(const ReducedSystem& r, double t,
                               std::span<const double> y_non_qss,
                               ClosureCache* cache = nullptr) {
  auto [y_qss, report] = solve_qss_closure(r, t, y_non_qss, cache);
  if (!report.converged)
    throw numeric_error("QSS closure did not converge; sensitivities undefined at this state");
  const auto guarded = detail::guard_inputs(y_non_qss);
  const std::size_t nq = r.qss_count();
  const std::size_t nn = r.non_qss_count();

  if (r.closure_mode == ClosureMode::closed_form_rober) {
    Matrix m(1, 2);
    const std::vector<double> e1{1.0, 0.0}, e3{0.0, 1.0};
    m(0, 0) = closure_tangent(r, t, y_non_qss, e1)[0];
    m(0, 1) = closure_tangent(r, t, y_non_qss, e3)[0];
    return m;
  }

  const auto lin = detail::linearize_closure(r, t, y_non_qss, guarded, y_qss);
  Matrix out(nq, nn);
  std::vector<double> col(nq);
  for (std::size_t j = 0; j < nn; ++j) {
    for (std::size_t a = 0; a < nq; ++a) col[a] = -lin.cross(a, j);
    lu_solve(lin.lu, std::span<double>(col));
    for (std::size_t a = 0; a < nq; ++a) out(a, j) = col[a];
  }
  return out;
}

inline std::vector<double> reduced_initial_state(const ReducedSystem& r) {
  std::vector<double> y0(r.non_qss_count());
  for (std::size_t j = 0; j < y0.size(); ++j)
    y0[j] = r.base.initial_concentrations[static_cast<std::size_t>(r.partition.non_qss_indices[j])];
  return y0;
}

struct ReducedStart {
  double t = 0.0;
  std::vector<double> y;
};

// Starting point for integrating the reduced system. The full model's initial
// state can make the algebraic constraints infeasible (the pollution model
// starts with zero NO2, which switches off every radical sink while radical
// production stays on, so no steady state exists there). When the projected
// initial state is rejected, the start is taken from the first reference row
// past t0 where the closure converges.
inline ReducedStart consistent_reduced_start(const ReducedSystem& r,
                                             const SolutionTrajectory& reference) {
  if (reference.states.cols() != r.base.species_count() || reference.times.empty())
    throw dimension_error("reference trajectory does not match the reduced system's mechanism");
  ReducedStart start{r.base.t_span.first, reduced_initial_state(r)};
  if (solve_qss_closure(r, start.t, start.y).second.converged) return start;
  for (std::size_t i = 0; i < reference.times.size(); ++i) {
    if (reference.times[i] <= r.base.t_span.first) continue;
    std::vector<double> row(r.non_qss_count());
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] =
          std::max(0.0, reference.states(i, static_cast<std::size_t>(r.partition.non_qss_indices[j])));
    if (solve_qss_closure(r, reference.times[i], row).second.converged)
      return {reference.times[i], std::move(row)};
  }
  throw numeric_error("no reference state admits a converged closure");
}

// RHS of the reduced ODE system over the non-QSS species. Each function
// object carries its own warm-start cache, so copies form independent
// evaluation streams.
inline RhsFn make_reduced_rhs(const ReducedSystem& r) {
  return [r, cache = ClosureCache{}](double t, std::span<const double> y,
                                     std::span<double> f) mutable {
    const std::vector<double> out = reduced_rhs(r, t, y, &cache);
    std::copy(out.begin(), out.end(), f.begin());
  };
}

// Closure values along a reduced trajectory, one row per recorded time.
inline Matrix closure_profile(const ReducedSystem& r, const SolutionTrajectory& reduced) {
  if (reduced.states.cols() != r.non_qss_count())
    throw dimension_error("trajectory width does not match the reduced system");
  Matrix out(reduced.times.size(), r.qss_count());
  ClosureCache cache;
  std::vector<double> row(r.non_qss_count());
  for (std::size_t i = 0; i < reduced.times.size(); ++i) {
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = reduced.states(i, j);
    auto [y_qss, report] = solve_qss_closure(r, reduced.times[i], row, &cache);
    if (!report.converged)
      throw numeric_error("QSS closure did not converge along the trajectory");
    for (std::size_t a = 0; a < y_qss.size(); ++a) out(i, a) = y_qss[a];
  }
  return out;
}

// A reduced mechanism file is the mechanism grammar plus one partition line:
//   QSS: <name> <name> ...
inline std::string serialize_reduced(const Mechanism& m, const QssPartition& p) {
  std::string out = serialize_mechanism(m);
  out += "QSS:";
  for (int s : p.qss_indices) out += " " + m.species_names[static_cast<std::size_t>(s)];
  out += "\n";
  return out;
}

inline std::pair<Mechanism, QssPartition> parse_reduced(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      lines.emplace_back(text.substr(start));
      break;
    }
    lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }

  int qss_line = -1;
  std::vector<std::string_view> qss_names;
  std::string stripped;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view t = trim(lines[i]);
    if (t.rfind("QSS:", 0) == 0) {
      if (qss_line >= 0)
        throw parse_error("duplicate QSS partition line", static_cast<int>(i) + 1);
      qss_line = static_cast<int>(i) + 1;
      qss_names = split_ws(t.substr(4));
      stripped += "\n";  // keep line numbering for mechanism errors
    } else {
      stripped += lines[i];
      stripped += "\n";
    }
  }
  if (qss_line < 0) throw parse_error("missing QSS partition line");
  if (qss_names.empty()) throw parse_error("QSS partition line lists no species", qss_line);

  Mechanism m = parse_mechanism(stripped);
  QssPartition p;
  std::vector<char> is_qss(m.species_count(), 0);
  for (const auto& name : qss_names) {
    const int idx = m.species_index(name);
    if (idx < 0)
      throw parse_error("unknown species " + std::string(name) + " in QSS partition", qss_line);
    if (is_qss[static_cast<std::size_t>(idx)])
      throw parse_error("species " + std::string(name) + " listed twice in QSS partition",
                        qss_line);
    is_qss[static_cast<std::size_t>(idx)] = 1;
  }
  for (std::size_t s = 0; s < m.species_count(); ++s)
    (is_qss[s] ? p.qss_indices : p.non_qss_indices).push_back(static_cast<int>(s));
  if (p.non_qss_indices.empty())
    throw parse_error("QSS partition leaves no differential species", qss_line);
  return {std::move(m), std::move(p)};
}

}  // namespace kinnet
