#pragma once
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kinnet/errors.hpp"
#include "kinnet/linalg.hpp"
#include "kinnet/mechanism.hpp"
#include "kinnet/text.hpp"

// Reference integrators: explicit Dormand-Prince 5(4) and implicit
// variable-order BDF (orders 1-5 with a modified-Newton corrector), plus the
// Jacobian-spectrum stiffness analyzer. Both integrators share the weighted
// RMS error norm and the classical automatic first-step estimate.

namespace kinnet {

using RhsFn = std::function<void(double t, std::span<const double> y, std::span<double> f)>;
using JacFn = std::function<void(double t, std::span<const double> y, Matrix& jac)>;

enum class Method { bdf, dopri5 };

struct SolverConfig {
  double rtol = 1e-8;
  std::vector<double> atol{1e-12};  // one entry broadcasts to every species
  double initial_step = 0.0;        // 0 = choose automatically
  long max_steps = 10'000'000;
  Method method = Method::bdf;
};

struct StepStats {
  long accepted_steps = 0;
  long rejected_steps = 0;
  long rhs_evaluations = 0;
  long jacobian_evaluations = 0;
  long newton_iterations = 0;
};

struct SolutionTrajectory {
  std::vector<double> times;
  Matrix states;  // row per time, column per species
  StepStats stats;
};

namespace detail {

inline void validate_solver_inputs(std::span<const double> y0, std::pair<double, double> t_span,
                                   const SolverConfig& cfg, std::span<const double> output_times) {
  if (!(cfg.rtol > 0.0)) throw config_error("rtol must be positive");
  if (cfg.atol.empty()) throw config_error("atol must not be empty");
  for (double a : cfg.atol)
    if (!(a > 0.0)) throw config_error("atol must be positive");
  if (cfg.atol.size() != 1 && cfg.atol.size() != y0.size())
    throw dimension_error("atol length must be 1 or the species count");
  if (cfg.max_steps <= 0) throw config_error("max_steps must be positive");
  if (!(t_span.first < t_span.second)) throw config_error("t_span start must precede end");
  double prev = -std::numeric_limits<double>::infinity();
  for (double t : output_times) {
    if (t < t_span.first || t > t_span.second)
      throw config_error("output time " + g17(t) + " outside t_span");
    if (!(t > prev)) throw config_error("output times must be strictly increasing");
    prev = t;
  }
}

inline double atol_at(const SolverConfig& cfg, std::size_t i) {
  return cfg.atol.size() == 1 ? cfg.atol[0] : cfg.atol[i];
}

inline double rms_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Classical first-step heuristic from the sizes of y0, f(y0) and a trial
// Euler probe of the second derivative.
inline double initial_step_guess(const RhsFn& rhs, double t0, std::span<const double> y0,
                                 std::span<const double> f0, double t_bound, int order,
                                 const SolverConfig& cfg, StepStats& stats) {
  const std::size_t n = y0.size();
  if (n == 0) return t_bound - t0;
  std::vector<double> scale(n), tmp(n), f1(n);
  for (std::size_t i = 0; i < n; ++i) scale[i] = atol_at(cfg, i) + std::abs(y0[i]) * cfg.rtol;
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y0[i] / scale[i];
  const double d0 = rms_norm(tmp);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = f0[i] / scale[i];
  const double d1 = rms_norm(tmp);
  const double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;

  for (std::size_t i = 0; i < n; ++i) tmp[i] = y0[i] + h0 * f0[i];
  rhs(t0 + h0, tmp, f1);
  ++stats.rhs_evaluations;
  for (std::size_t i = 0; i < n; ++i) tmp[i] = (f1[i] - f0[i]) / scale[i];
  const double d2 = rms_norm(tmp) / h0;

  double h1;
  if (d1 <= 1e-15 && d2 <= 1e-15)
    h1 = std::max(1e-6, h0 * 1e-3);
  else
    h1 = std::pow(0.01 / std::max(d1, d2), 1.0 / (order + 1));
  return std::min({100.0 * h0, h1, t_bound - t0});
}

// Streams accepted steps into the trajectory, interpolating whenever a
// requested output time falls inside a step.
class OutputCollector {
 public:
  OutputCollector(SolutionTrajectory& traj, std::span<const double> output_times, std::size_t n)
      : traj_(traj), times_(output_times), n_(n) {}

  void start(double t0, std::span<const double> y0) {
    if (times_.empty()) {
      append(t0, y0);
      return;
    }
    while (next_ < times_.size() && times_[next_] == t0) {
      append(t0, y0);
      ++next_;
    }
  }

  template <class Interp>
  void accepted(double t_new, std::span<const double> y_new, Interp&& interp) {
    if (times_.empty()) {
      append(t_new, y_new);
      return;
    }
    std::vector<double> buf(n_);
    while (next_ < times_.size() && times_[next_] <= t_new) {
      const double tau = times_[next_];
      if (tau == t_new) {
        append(tau, y_new);
      } else {
        interp(tau, std::span<double>(buf));
        append(tau, std::span<const double>(buf));
      }
      ++next_;
    }
  }

  void finish() {
    traj_.states = Matrix(traj_.times.size(), n_);
    for (std::size_t i = 0; i < traj_.times.size(); ++i)
      for (std::size_t j = 0; j < n_; ++j) traj_.states(i, j) = rows_[i * n_ + j];
  }

 private:
  void append(double t, std::span<const double> y) {
    traj_.times.push_back(t);
    rows_.insert(rows_.end(), y.begin(), y.end());
  }
  SolutionTrajectory& traj_;
  std::span<const double> times_;
  std::size_t n_;
  std::size_t next_ = 0;
  std::vector<double> rows_;
};

}  // namespace detail

inline SolutionTrajectory integrate_dopri5(const RhsFn& rhs, std::span<const double> y0,
                                           std::pair<double, double> t_span,
                                           const SolverConfig& cfg,
                                           std::span<const double> output_times = {}) {
  detail::validate_solver_inputs(y0, t_span, cfg, output_times);
  const std::size_t n = y0.size();
  SolutionTrajectory traj;
  detail::OutputCollector out(traj, output_times, n);

  static constexpr double C[7] = {0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static constexpr double A[7][6] = {
      {0, 0, 0, 0, 0, 0},
      {1.0 / 5, 0, 0, 0, 0, 0},
      {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
      {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
      {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
  static constexpr double B[6] = {35.0 / 384,      0, 500.0 / 1113, 125.0 / 192,
                                  -2187.0 / 6784, 11.0 / 84};
  static constexpr double E[7] = {71.0 / 57600,       0,          -71.0 / 16695, 71.0 / 1920,
                                  -17253.0 / 339200, 22.0 / 525, -1.0 / 40};
  // Quartic dense-output coefficients for the 5(4) pair.
  static constexpr double P[7][4] = {
      {1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0,
       -12715105075.0 / 11282082432.0},
      {0.0, 0.0, 0.0, 0.0},
      {0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0,
       87487479700.0 / 32700410799.0},
      {0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0,
       -10690763975.0 / 1880347072.0},
      {0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0,
       701980252875.0 / 199316789632.0},
      {0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0},
      {0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0}};

  const double t_bound = t_span.second;
  double t = t_span.first;
  std::vector<double> y(y0.begin(), y0.end());
  std::vector<double> K[7];
  for (auto& k : K) k.assign(n, 0.0);
  std::vector<double> y_stage(n), y_new(n), err(n);

  rhs(t, y, K[0]);
  ++traj.stats.rhs_evaluations;
  double h = cfg.initial_step > 0.0
                 ? cfg.initial_step
                 : detail::initial_step_guess(rhs, t, y, K[0], t_bound, 4, cfg, traj.stats);

  out.start(t, y);

  // PI controller state (error history across accepted steps).
  const double beta = 0.04, expo1 = 0.2 - 0.75 * beta, safe = 0.9;
  const double fac_shrink_limit = 5.0, fac_grow_limit = 0.1;  // bounds on h_old/h_new
  double facold = 1e-4;

  while (t < t_bound) {
    if (traj.stats.accepted_steps + traj.stats.rejected_steps >= cfg.max_steps)
      throw numeric_error("dopri5: max_steps exceeded at t=" + g17(t) +
                          " (likely a stiff problem)");
    const double min_step =
        10.0 * (std::nextafter(t, std::numeric_limits<double>::infinity()) - t);
    if (h < min_step) throw numeric_error("dopri5: step size underflow at t=" + g17(t));
    bool clipped = false;
    if (t + h >= t_bound) {
      h = t_bound - t;
      clipped = true;
    }

    for (int s = 1; s < 6; ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < s; ++j) acc += A[s][j] * K[j][i];
        y_stage[i] = y[i] + h * acc;
      }
      rhs(t + C[s] * h, y_stage, K[s]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < 6; ++j) acc += B[j] * K[j][i];
      y_new[i] = y[i] + h * acc;
    }
    rhs(t + h, y_new, K[6]);
    traj.stats.rhs_evaluations += 6;

    double err_norm;
    {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 7; ++j) acc += E[j] * K[j][i];
        const double sc =
            detail::atol_at(cfg, i) + cfg.rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
        const double e = h * acc / sc;
        s += e * e;
      }
      err_norm = n > 0 ? std::sqrt(s / static_cast<double>(n)) : 0.0;
    }

    if (!std::isfinite(err_norm)) {
      ++traj.stats.rejected_steps;
      h *= 0.1;
      continue;
    }

    const double fac11 = std::pow(err_norm, expo1);
    if (err_norm <= 1.0) {
      // Accept; PI growth limited by recent error history.
      double fac = fac11 / std::pow(facold, beta);
      fac = std::max(fac_grow_limit, std::min(fac_shrink_limit, fac / safe));
      const double h_new = h / fac;
      facold = std::max(err_norm, 1e-4);

      const double t_old = t, h_used = h;
      t = clipped ? t_bound : t + h;
      ++traj.stats.accepted_steps;
      out.accepted(t, y_new, [&](double tau, std::span<double> dst) {
        const double x = (tau - t_old) / h_used;
        double p[4] = {x, x * x, x * x * x, x * x * x * x};
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int s = 0; s < 7; ++s) {
            double q = 0.0;
            for (int d = 0; d < 4; ++d) q += P[s][d] * p[d];
            acc += K[s][i] * q;
          }
          dst[i] = y[i] + h_used * acc;
        }
      });
      y.swap(y_new);
      K[0].swap(K[6]);  // first-same-as-last
      h = h_new;
    } else {
      ++traj.stats.rejected_steps;
      h = h / std::min(fac_shrink_limit, fac11 / safe);
    }
  }

  out.finish();
  return traj;
}

namespace detail {

inline constexpr int kBdfMaxOrder = 5;
inline constexpr int kNewtonMaxIter = 4;
inline constexpr double kBdfMinFactor = 0.2;
inline constexpr double kBdfMaxFactor = 10.0;

// R matrix connecting backward-difference arrays before/after a step-size
// change by `factor` (cumulative products of a bidiagonal recurrence).
inline Matrix bdf_R(int order, double factor) {
  const auto m = static_cast<std::size_t>(order + 1);
  Matrix M(m, m);
  for (std::size_t j = 0; j < m; ++j) M(0, j) = 1.0;
  for (std::size_t i = 1; i < m; ++i)
    for (std::size_t j = 1; j < m; ++j)
      M(i, j) = (static_cast<double>(i) - 1.0 - factor * static_cast<double>(j)) /
                static_cast<double>(i);
  for (std::size_t i = 1; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) M(i, j) *= M(i - 1, j);
  return M;
}

inline void bdf_change_D(Matrix& D, int order, double factor) {
  const Matrix RU = bdf_R(order, factor) * bdf_R(order, 1.0);
  const auto m = static_cast<std::size_t>(order + 1);
  const std::size_t n = D.cols();
  Matrix nD(m, n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < m; ++k) acc += RU(k, r) * D(k, c);
      nD(r, c) = acc;
    }
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) D(r, c) = nD(r, c);
}

}  // namespace detail

inline SolutionTrajectory integrate_bdf(const RhsFn& rhs, const JacFn& jac,
                                        std::span<const double> y0,
                                        std::pair<double, double> t_span, const SolverConfig& cfg,
                                        std::span<const double> output_times = {}) {
  detail::validate_solver_inputs(y0, t_span, cfg, output_times);
  const std::size_t n = y0.size();
  SolutionTrajectory traj;
  detail::OutputCollector out(traj, output_times, n);

  const double t_bound = t_span.second;
  double t = t_span.first;
  std::vector<double> y(y0.begin(), y0.end());
  std::vector<double> f(n), scale(n), psi(n), d(n), dy(n), y_predict(n), y_new(n), rhs_vec(n);

  rhs(t, y, f);
  ++traj.stats.rhs_evaluations;
  double h_abs = cfg.initial_step > 0.0
                     ? cfg.initial_step
                     : detail::initial_step_guess(rhs, t, y, f, t_bound, 1, cfg, traj.stats);
  h_abs = std::min(h_abs, t_bound - t);

  // Order-q coefficients of the fixed-leading-coefficient formulation with
  // plain BDF formulas (order 1 is exactly backward Euler): gamma[q] = sum
  // 1/j, alpha = gamma, local error constant 1/(q+1).
  double gamma[detail::kBdfMaxOrder + 1];
  double alpha[detail::kBdfMaxOrder + 1];
  double error_const[detail::kBdfMaxOrder + 2];
  gamma[0] = 0.0;
  for (int q = 1; q <= detail::kBdfMaxOrder; ++q) gamma[q] = gamma[q - 1] + 1.0 / q;
  for (int q = 0; q <= detail::kBdfMaxOrder; ++q) {
    alpha[q] = gamma[q];
    error_const[q] = 1.0 / (q + 1);
  }
  error_const[detail::kBdfMaxOrder + 1] = 1.0 / (detail::kBdfMaxOrder + 2);

  const double newton_tol =
      std::max(10.0 * std::numeric_limits<double>::epsilon() / cfg.rtol,
               std::min(0.03, std::sqrt(cfg.rtol)));

  Matrix D(detail::kBdfMaxOrder + 3, n);
  for (std::size_t i = 0; i < n; ++i) {
    D(0, i) = y[i];
    D(1, i) = f[i] * h_abs;
  }

  Matrix J(n, n);
  jac(t, y, J);
  ++traj.stats.jacobian_evaluations;
  LuFactors LU;
  bool have_lu = false;
  int order = 1;
  int n_equal_steps = 0;

  out.start(t, y);

  auto factor_lhs = [&](double c) {
    Matrix m = Matrix::identity(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(i, j) -= c * J(i, j);
    LU = lu_factor(std::move(m));
    have_lu = !LU.singular;
    return have_lu;
  };

  while (t < t_bound) {
    if (traj.stats.accepted_steps + traj.stats.rejected_steps >= cfg.max_steps)
      throw numeric_error("bdf: max_steps exceeded at t=" + g17(t));

    const double min_step =
        10.0 * (std::nextafter(t, std::numeric_limits<double>::infinity()) - t);
    if (h_abs < min_step) {
      detail::bdf_change_D(D, order, min_step / h_abs);
      h_abs = min_step;
      n_equal_steps = 0;
    }

    bool current_jac = false;
    bool step_accepted = false;
    double safety = 0.9;
    while (!step_accepted) {
      if (h_abs < min_step) throw numeric_error("bdf: step size underflow at t=" + g17(t));
      double h = h_abs;
      double t_new = t + h;
      if (t_new > t_bound) {
        t_new = t_bound;
        detail::bdf_change_D(D, order, (t_new - t) / h_abs);
        n_equal_steps = 0;
        have_lu = false;
      }
      h = t_new - t;
      h_abs = h;

      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int q = 0; q <= order; ++q) acc += D(static_cast<std::size_t>(q), i);
        y_predict[i] = acc;
        scale[i] = detail::atol_at(cfg, i) + cfg.rtol * std::abs(y_predict[i]);
        double p = 0.0;
        for (int q = 1; q <= order; ++q) p += D(static_cast<std::size_t>(q), i) * gamma[q];
        psi[i] = p / alpha[order];
      }

      const double c = h / alpha[order];
      bool converged = false;
      int n_iter = 0;
      while (!converged) {
        if (!have_lu) {
          if (!factor_lhs(c)) break;  // singular iteration matrix: treat as failed Newton
        }
        // Modified Newton on the accumulated correction d.
        std::fill(d.begin(), d.end(), 0.0);
        std::copy(y_predict.begin(), y_predict.end(), y_new.begin());
        double dy_norm_old = -1.0;
        converged = false;
        n_iter = 0;
        for (int it = 0; it < detail::kNewtonMaxIter; ++it) {
          ++n_iter;
          rhs(t_new, y_new, f);
          ++traj.stats.rhs_evaluations;
          bool finite = true;
          for (double v : f) finite = finite && std::isfinite(v);
          if (!finite) break;
          for (std::size_t i = 0; i < n; ++i) rhs_vec[i] = c * f[i] - psi[i] - d[i];
          std::copy(rhs_vec.begin(), rhs_vec.end(), dy.begin());
          lu_solve(LU, std::span<double>(dy));
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double e = dy[i] / scale[i];
            s += e * e;
          }
          const double dy_norm = std::sqrt(s / static_cast<double>(n));
          double rate = -1.0;
          if (dy_norm_old > 0.0) rate = dy_norm / dy_norm_old;
          if (rate >= 0.0 &&
              (rate >= 1.0 ||
               std::pow(rate, detail::kNewtonMaxIter - it) / (1.0 - rate) * dy_norm > newton_tol))
            break;
          for (std::size_t i = 0; i < n; ++i) {
            y_new[i] += dy[i];
            d[i] += dy[i];
          }
          if ((rate < 0.0 && dy_norm == 0.0) ||
              (rate >= 0.0 && rate / (1.0 - rate) * dy_norm < newton_tol)) {
            converged = true;
            break;
          }
          dy_norm_old = dy_norm;
        }
        traj.stats.newton_iterations += n_iter;

        if (!converged) {
          if (current_jac) break;
          jac(t_new, y_predict, J);
          ++traj.stats.jacobian_evaluations;
          have_lu = false;
          current_jac = true;
        }
      }

      if (!converged) {
        ++traj.stats.rejected_steps;
        h_abs *= 0.5;
        detail::bdf_change_D(D, order, 0.5);
        n_equal_steps = 0;
        have_lu = false;
        continue;
      }

      safety = 0.9 * (2.0 * detail::kNewtonMaxIter + 1.0) /
               (2.0 * detail::kNewtonMaxIter + n_iter);
      for (std::size_t i = 0; i < n; ++i)
        scale[i] = detail::atol_at(cfg, i) + cfg.rtol * std::abs(y_new[i]);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = error_const[order] * d[i] / scale[i];
        s += e * e;
      }
      const double error_norm = std::sqrt(s / static_cast<double>(n));

      if (!(error_norm <= 1.0)) {  // also catches NaN
        ++traj.stats.rejected_steps;
        double factor = detail::kBdfMinFactor;
        if (std::isfinite(error_norm))
          factor = std::max(detail::kBdfMinFactor,
                            safety * std::pow(error_norm, -1.0 / (order + 1)));
        h_abs *= factor;
        detail::bdf_change_D(D, order, factor);
        n_equal_steps = 0;
        // Newton itself was healthy, so the factorization is kept; the
        // corrector still solves the right equations, just preconditioned
        // by a slightly stale matrix.
      } else {
        step_accepted = true;
        ++traj.stats.accepted_steps;
        ++n_equal_steps;
        t = t_new;

        // Difference-table update with the new correction d.
        for (std::size_t i = 0; i < n; ++i) {
          const auto q2 = static_cast<std::size_t>(order + 2);
          const auto q1 = static_cast<std::size_t>(order + 1);
          D(q2, i) = d[i] - D(q1, i);
          D(q1, i) = d[i];
          for (int r = order; r >= 0; --r)
            D(static_cast<std::size_t>(r), i) += D(static_cast<std::size_t>(r) + 1, i);
        }
        y.assign(y_new.begin(), y_new.end());

        const int used_order = order;
        const double h_used = h;
        const double err_q = error_norm;

        // Interpolant: Newton backward differences of the just-updated table,
        // evaluated before any order/step rescaling touches it.
        out.accepted(t, y, [&](double tau, std::span<double> dst) {
          for (std::size_t i = 0; i < n; ++i) dst[i] = D(0, i);
          double p = 1.0;
          for (int q = 1; q <= used_order; ++q) {
            const double t_shift = t - h_used * (q - 1);
            const double denom = h_used * q;
            p *= (tau - t_shift) / denom;
            for (std::size_t i = 0; i < n; ++i) dst[i] += D(static_cast<std::size_t>(q), i) * p;
          }
        });

        // Order adaptation once a full window of equal steps exists.
        if (n_equal_steps >= order + 1) {
          double err_m = std::numeric_limits<double>::infinity();
          double err_p = std::numeric_limits<double>::infinity();
          if (order > 1) {
            double sm = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const double e =
                  error_const[order - 1] * D(static_cast<std::size_t>(order), i) / scale[i];
              sm += e * e;
            }
            err_m = std::sqrt(sm / static_cast<double>(n));
          }
          if (order < detail::kBdfMaxOrder) {
            double sp = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const double e =
                  error_const[order + 1] * D(static_cast<std::size_t>(order) + 2, i) / scale[i];
              sp += e * e;
            }
            err_p = std::sqrt(sp / static_cast<double>(n));
          }
          const double norms[3] = {err_m, err_q, err_p};
          double best_factor = -1.0;
          int best_delta = 0;
          for (int delta = -1; delta <= 1; ++delta) {
            const double nq = norms[delta + 1];
            const double fac =
                nq == 0.0 ? std::numeric_limits<double>::infinity()
                          : std::pow(nq, -1.0 / (order + delta + 1));
            if (fac > best_factor) {
              best_factor = fac;
              best_delta = delta;
            }
          }
          order += best_delta;
          double factor = std::min(detail::kBdfMaxFactor, safety * best_factor);
          if (!std::isfinite(factor)) factor = detail::kBdfMaxFactor;
          h_abs *= factor;
          detail::bdf_change_D(D, order, factor);
          n_equal_steps = 0;
          have_lu = false;
        }
      }
    }
  }

  out.finish();
  return traj;
}

inline std::vector<std::complex<double>> stiffness_spectrum(const JacFn& jac,
                                                            const StateVector& s) {
  const std::size_t n = s.y.size();
  if (n > 32) throw dimension_error("stiffness_spectrum limited to 32 species");
  Matrix J(n, n);
  jac(s.t, s.y, J);
  return eigenvalues(J);
}

// Ratio of the largest to the smallest nonzero eigenvalue magnitude; the
// near-zero modes (conservation constraints) are excluded.
inline double stiffness_ratio(std::span<const std::complex<double>> spectrum) {
  if (spectrum.empty()) throw dimension_error("stiffness_ratio of an empty spectrum");
  double max_abs = 0.0;
  for (auto z : spectrum) max_abs = std::max(max_abs, std::abs(z));
  if (max_abs == 0.0)
    throw numeric_error("stiffness ratio undefined: all eigenvalues are numerically zero");
  const double cutoff = 1e-12 * max_abs;
  double min_abs = std::numeric_limits<double>::infinity();
  for (auto z : spectrum) {
    const double a = std::abs(z);
    if (a >= cutoff) min_abs = std::min(min_abs, a);
  }
  return max_abs / std::max(min_abs, 1e-300);
}

inline std::string trajectory_to_csv(const SolutionTrajectory& traj,
                                     const std::vector<std::string>& species_names) {
  if (traj.states.cols() != species_names.size())
    throw dimension_error("species name count does not match trajectory width");
  std::string out = "t";
  for (const auto& name : species_names) out += "," + name;
  out += "\n";
  for (std::size_t r = 0; r < traj.times.size(); ++r) {
    out += g17(traj.times[r]);
    for (std::size_t c = 0; c < traj.states.cols(); ++c) out += "," + g17(traj.states(r, c));
    out += "\n";
  }
  out += "# accepted_steps=" + std::to_string(traj.stats.accepted_steps) + "\n";
  out += "# rejected_steps=" + std::to_string(traj.stats.rejected_steps) + "\n";
  out += "# rhs_evaluations=" + std::to_string(traj.stats.rhs_evaluations) + "\n";
  out += "# jacobian_evaluations=" + std::to_string(traj.stats.jacobian_evaluations) + "\n";
  out += "# newton_iterations=" + std::to_string(traj.stats.newton_iterations) + "\n";
  return out;
}

inline SolutionTrajectory trajectory_from_csv(std::string_view text,
                                              std::vector<std::string>* species_names = nullptr) {
  SolutionTrajectory traj;
  std::vector<double> flat;
  std::size_t cols = 0;
  bool have_header = false;
  int line_no = 0;
  for (auto raw : split_char(text, '\n')) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq != std::string_view::npos) {
        const auto key = trim(line.substr(1, eq - 1));
        const long v = parse_integer(trim(line.substr(eq + 1)), line_no);
        if (key == "accepted_steps") traj.stats.accepted_steps = v;
        else if (key == "rejected_steps") traj.stats.rejected_steps = v;
        else if (key == "rhs_evaluations") traj.stats.rhs_evaluations = v;
        else if (key == "jacobian_evaluations") traj.stats.jacobian_evaluations = v;
        else if (key == "newton_iterations") traj.stats.newton_iterations = v;
      }
      continue;
    }
    const auto fields = split_char(line, ',');
    if (!have_header) {
      if (fields.empty() || trim(fields[0]) != "t")
        throw parse_error("trajectory header must start with 't'", line_no);
      cols = fields.size() - 1;
      if (species_names) {
        species_names->clear();
        for (std::size_t i = 1; i < fields.size(); ++i)
          species_names->emplace_back(trim(fields[i]));
      }
      have_header = true;
      continue;
    }
    if (fields.size() != cols + 1)
      throw parse_error("trajectory row has wrong field count", line_no);
    traj.times.push_back(parse_real(trim(fields[0]), line_no));
    for (std::size_t i = 1; i < fields.size(); ++i)
      flat.push_back(parse_real(trim(fields[i]), line_no));
  }
  if (!have_header) throw parse_error("trajectory CSV has no header");
  traj.states = Matrix(traj.times.size(), cols);
  for (std::size_t r = 0; r < traj.times.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) traj.states(r, c) = flat[r * cols + c];
  for (std::size_t r = 1; r < traj.times.size(); ++r)
    if (!(traj.times[r] > traj.times[r - 1]))
      throw parse_error("trajectory times must increase");
  return traj;
}

inline RhsFn make_rhs(Mechanism m) {
  return [m = std::move(m)](double, std::span<const double> y, std::span<double> f) {
    const auto v = mass_action_rhs<double>(m, y);
    std::copy(v.begin(), v.end(), f.begin());
  };
}

inline JacFn make_jacobian(Mechanism m) {
  return [m = std::move(m)](double t, std::span<const double> y, Matrix& jac) {
    jac = mass_action_jacobian(m, StateVector{t, {y.begin(), y.end()}});
  };
}

}  // namespace kinnet
