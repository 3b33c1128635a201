#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kinnet/autodiff.hpp"
#include "kinnet/errors.hpp"
#include "kinnet/integrate.hpp"
#include "kinnet/mechanism.hpp"
#include "kinnet/network.hpp"
#include "kinnet/qssa.hpp"
#include "kinnet/rng.hpp"

// Collocation residual losses for the full and QSS-reduced systems, the Adam
// training loop, and the evaluation helpers around a trained network.

namespace kinnet {

enum class Sampling { log_uniform, uniform };

struct TrainingConfig {
  std::size_t n_collocation = 2500;
  double t_min = 1e-5;
  double t_max = 1e5;
  Sampling sampling = Sampling::log_uniform;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::size_t max_updates = 100000;
  std::vector<double> species_weights;  // one per trained species
  std::uint64_t rng_seed = 0;
  OutputTransform output_transform = OutputTransform::hard_ic;
  std::vector<double> y_ref_scale;  // optional, normalizes evaluation errors
  // Stop when the best mini-batch loss has not improved by 0.1% for this many
  // updates; 0 disables the check.
  std::size_t plateau_window = 10000;
  std::size_t record_every = 100;
};

struct LossRecord {
  std::size_t step = 0;
  double total_loss = 0.0;
  std::vector<double> per_species_loss;
  double wall_time = 0.0;
};

// One assembled loss: the differentiable node plus its decomposition. The
// recorded total is the sum of the per-species parts, so the bookkeeping
// invariant holds exactly; the node's own value agrees to rounding.
struct LossTerms {
  TapeVar node;
  double total = 0.0;
  std::vector<double> per_species;
  std::size_t closure_failures = 0;
  std::size_t points_used = 0;
};

inline void validate_training(const TrainingConfig& cfg, std::size_t trained_species) {
  if (!(cfg.t_min > 0.0) || !(cfg.t_min < cfg.t_max))
    throw config_error("collocation span needs 0 < t_min < t_max");
  if (cfg.batch_size == 0 || cfg.batch_size > cfg.n_collocation)
    throw config_error("batch size must be in [1, n_collocation]");
  if (!(cfg.learning_rate > 0.0)) throw config_error("learning rate must be positive");
  if (cfg.species_weights.size() != trained_species)
    throw config_error("species_weights needs one entry per trained species");
  for (const double w : cfg.species_weights)
    if (!(w > 0.0)) throw config_error("species weights must be positive");
  if (!cfg.y_ref_scale.empty()) {
    if (cfg.y_ref_scale.size() != trained_species)
      throw config_error("y_ref_scale needs one entry per trained species");
    for (const double s : cfg.y_ref_scale)
      if (!(s > 0.0)) throw config_error("y_ref_scale entries must be positive");
  }
}

inline std::vector<double> sample_collocation(const TrainingConfig& cfg, Rng& rng) {
  if (!(cfg.t_min > 0.0) || cfg.t_min > cfg.t_max)
    throw config_error("collocation span needs 0 < t_min <= t_max");
  std::vector<double> out(cfg.n_collocation);
  if (cfg.sampling == Sampling::log_uniform) {
    const double lo = std::log10(cfg.t_min), hi = std::log10(cfg.t_max);
    for (auto& t : out) t = std::pow(10.0, rng.uniform(lo, hi));
  } else {
    for (auto& t : out) t = rng.uniform(cfg.t_min, cfg.t_max);
  }
  return out;
}

// Deterministic evaluation grid: n points whose log10 values are evenly
// spaced over [t_min, t_max], endpoints included.
inline std::vector<double> log_uniform_grid(double t_min, double t_max, std::size_t n) {
  if (!(t_min > 0.0) || !(t_min < t_max)) throw config_error("grid span needs 0 < t_min < t_max");
  if (n < 2) throw config_error("grid needs at least two points");
  const double lo = std::log10(t_min), hi = std::log10(t_max);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = std::pow(10.0, lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  out.front() = t_min;
  out.back() = t_max;
  return out;
}

// Mean over the batch of the weighted squared collocation residuals
// dy_i/dt - f_i(y) for the full mechanism. The predictor maps (tape, t) to
// the taped species predictions.
template <class Predictor>
LossTerms residual_loss(Tape& tape, const Mechanism& mech, std::span<const double> batch,
                        std::span<const double> weights, Predictor&& predict_at) {
  if (batch.empty()) throw dimension_error("collocation batch is empty");
  if (weights.size() != mech.species_count())
    throw dimension_error("species weight count does not match the mechanism");
  LossTerms out;
  out.per_species.assign(weights.size(), 0.0);
  TapeVar total;
  for (const double t : batch) {
    const std::vector<TapeVar> y = predict_at(tape, t);
    if (y.size() != mech.species_count())
      throw dimension_error("prediction width does not match the mechanism");
    const std::vector<TapeVar> f = mass_action_rhs<TapeVar>(mech, y);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const TapeVar r = tape.tangent_of(y[i]) - f[i];
      const TapeVar term = weights[i] * (r * r);
      total = total + term;
      out.per_species[i] += tape.value(term);
    }
  }
  out.points_used = batch.size();
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.node = inv * total;
  for (auto& v : out.per_species) v *= inv;
  out.total = std::accumulate(out.per_species.begin(), out.per_species.end(), 0.0);
  return out;
}

// Reduced-system variant: only the non-QSS species carry residuals, with the
// QSS concentrations supplied by the algebraic closure. A collocation point
// whose closure does not converge is excluded from the mean and counted.
template <class Predictor>
LossTerms residual_loss(Tape& tape, const ReducedSystem& sys, std::span<const double> batch,
                        std::span<const double> weights, Predictor&& predict_at) {
  if (batch.empty()) throw dimension_error("collocation batch is empty");
  if (weights.size() != sys.non_qss_count())
    throw dimension_error("species weight count does not match the reduced system");
  LossTerms out;
  out.per_species.assign(weights.size(), 0.0);
  TapeVar total;
  ClosureCache cache;
  const std::size_t n = sys.base.species_count();
  std::vector<double> vals(sys.non_qss_count());
  for (const double t : batch) {
    const std::vector<TapeVar> y = predict_at(tape, t);
    if (y.size() != sys.non_qss_count())
      throw dimension_error("prediction width does not match the reduced system");
    for (std::size_t j = 0; j < y.size(); ++j) vals[j] = tape.value(y[j]);
    const auto [qss, report] = solve_qss_closure(sys, t, vals, &cache);
    if (!report.converged) {
      ++out.closure_failures;
      continue;
    }
    const Matrix jac = closure_jacobian(sys, t, vals, &cache);
    const std::vector<TapeVar> qss_vars = tape.linearized(qss, jac, y);
    std::vector<TapeVar> full(n);
    for (std::size_t j = 0; j < y.size(); ++j)
      full[static_cast<std::size_t>(sys.partition.non_qss_indices[j])] = y[j];
    for (std::size_t a = 0; a < qss_vars.size(); ++a)
      full[static_cast<std::size_t>(sys.partition.qss_indices[a])] = qss_vars[a];
    const std::vector<TapeVar> f = mass_action_rhs<TapeVar>(sys.base, full);
    for (std::size_t j = 0; j < y.size(); ++j) {
      const TapeVar r =
          tape.tangent_of(y[j]) - f[static_cast<std::size_t>(sys.partition.non_qss_indices[j])];
      const TapeVar term = weights[j] * (r * r);
      total = total + term;
      out.per_species[j] += tape.value(term);
    }
    ++out.points_used;
  }
  if (out.points_used == 0)
    throw numeric_error("QSS closure failed at every collocation point in the batch");
  const double inv = 1.0 / static_cast<double>(out.points_used);
  out.node = inv * total;
  for (auto& v : out.per_species) v *= inv;
  out.total = std::accumulate(out.per_species.begin(), out.per_species.end(), 0.0);
  return out;
}

inline LossTerms residual_loss(const MlpModel& m, Tape& tape, const Mechanism& mech,
                               std::span<const double> batch, std::span<const double> weights,
                               std::span<const double> y0) {
  if (m.output_count() != mech.species_count())
    throw dimension_error("network output width does not match the mechanism");
  return residual_loss(tape, mech, batch, weights,
                       [&](Tape& tp, double t) { return predict_taped(m, tp, y0, t); });
}

inline LossTerms residual_loss(const MlpModel& m, Tape& tape, const ReducedSystem& sys,
                               std::span<const double> batch, std::span<const double> weights,
                               std::span<const double> y0_red) {
  if (m.output_count() != sys.non_qss_count())
    throw dimension_error("network output width does not match the reduced system");
  return residual_loss(tape, sys, batch, weights,
                       [&](Tape& tp, double t) { return predict_taped(m, tp, y0_red, t); });
}

// Initial-condition penalty for networks without the hard-IC transform, where
// y(0) is a free prediction. Weighted like the residuals.
inline void add_ic_penalty(const MlpModel& m, Tape& tape, std::span<const double> y0,
                           std::span<const double> weights, LossTerms& loss) {
  if (m.transform != OutputTransform::none) return;
  const std::vector<TapeVar> p0 = predict_taped(m, tape, y0, 0.0);
  for (std::size_t i = 0; i < p0.size(); ++i) {
    const TapeVar d = p0[i] - y0[i];
    const TapeVar term = weights[i] * (d * d);
    loss.node = loss.node + term;
    loss.per_species[i] += tape.value(term);
  }
  loss.total = std::accumulate(loss.per_species.begin(), loss.per_species.end(), 0.0);
}

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
};

inline void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state,
                      double lr) {
  if (grad.size() != params.size())
    throw dimension_error("gradient length does not match the parameters");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw dimension_error("optimizer state does not match the parameters");
  for (const double g : grad)
    if (!std::isfinite(g)) throw numeric_error("non-finite gradient; update aborted");
  ++state.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * grad[i];
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
    params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + kAdamEpsilon);
  }
}

struct TrainResult {
  MlpModel model;
  std::vector<LossRecord> history;
  std::size_t updates_run = 0;
  std::size_t closure_failures = 0;
  bool plateau_stopped = false;
};

namespace detail {

inline constexpr double kPlateauShrink = 0.999;

// Shared optimization loop: the loss builder records one mini-batch loss on
// the (cleared) tape. Collocation points are drawn once; batches walk a
// reshuffled ordering every epoch. Streams: 1 sampling, 2 shuffling.
template <class LossBuilder>
TrainResult train_driver(MlpModel model, const TrainingConfig& cfg, LossBuilder&& build_loss,
                         const std::function<void(const LossRecord&)>& on_record) {
  const auto started = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  Rng sample_rng(cfg.rng_seed, 1);
  const std::vector<double> points = sample_collocation(cfg, sample_rng);
  Rng shuffle_rng(cfg.rng_seed, 2);
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  TrainResult out;
  Tape tape(model.params);
  AdamState adam;
  std::vector<double> batch(cfg.batch_size);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;

  const auto emit = [&](std::size_t step, const LossTerms& loss) {
    out.history.push_back({step, loss.total, loss.per_species, elapsed()});
    if (on_record) on_record(out.history.back());
  };

  for (std::size_t step = 0; step < cfg.max_updates; ++step) {
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      batch[b] = points[order[cursor++]];
    }
    tape.clear();
    const LossTerms loss = build_loss(tape, model, std::span<const double>(batch));
    out.closure_failures += loss.closure_failures;
    if (!std::isfinite(loss.total))
      throw numeric_error("non-finite loss at update " + std::to_string(step));
    const GradientResult grads = tape.backward(loss.node);
    adam_step(model.params, grads.gradient, adam, cfg.learning_rate);
    ++out.updates_run;

    const bool last = step + 1 == cfg.max_updates;
    bool stop = false;
    if (loss.total < kPlateauShrink * best) {
      best = loss.total;
      best_step = step;
    } else if (cfg.plateau_window > 0 && step - best_step >= cfg.plateau_window) {
      stop = true;
    }
    if (last || stop || (cfg.record_every > 0 && step % cfg.record_every == 0))
      emit(step, loss);
    if (stop) {
      out.plateau_stopped = true;
      break;
    }
  }
  out.model = std::move(model);
  return out;
}

}  // namespace detail

inline TrainResult train(const MlpModel& model, const Mechanism& mech, const TrainingConfig& cfg,
                         const std::function<void(const LossRecord&)>& on_record = {}) {
  if (model.output_count() != mech.species_count())
    throw config_error("network output width does not match the mechanism");
  if (model.transform != cfg.output_transform)
    throw config_error("model and training config disagree on the output transform");
  validate_training(cfg, mech.species_count());
  const std::vector<double> y0 = mech.initial_concentrations;
  return detail::train_driver(
      model, cfg,
      [&](Tape& tape, const MlpModel& m, std::span<const double> batch) {
        LossTerms loss = residual_loss(m, tape, mech, batch, cfg.species_weights, y0);
        add_ic_penalty(m, tape, y0, cfg.species_weights, loss);
        return loss;
      },
      on_record);
}

inline TrainResult train(const MlpModel& model, const ReducedSystem& sys,
                         const TrainingConfig& cfg,
                         const std::function<void(const LossRecord&)>& on_record = {}) {
  if (model.output_count() != sys.non_qss_count())
    throw config_error("network output width does not match the reduced system");
  if (model.transform != cfg.output_transform)
    throw config_error("model and training config disagree on the output transform");
  validate_training(cfg, sys.non_qss_count());
  const std::vector<double> y0 = reduced_initial_state(sys);
  return detail::train_driver(
      model, cfg,
      [&](Tape& tape, const MlpModel& m, std::span<const double> batch) {
        LossTerms loss = residual_loss(m, tape, sys, batch, cfg.species_weights, y0);
        add_ic_penalty(m, tape, y0, cfg.species_weights, loss);
        return loss;
      },
      on_record);
}

// Root-mean-square error of the prediction against a reference trajectory,
// one value per network output. species_columns maps outputs to reference
// columns; a non-empty scale divides each error (normalized RMSE).
inline std::vector<double> evaluate_rmse(const MlpModel& m, std::span<const double> y0,
                                         const SolutionTrajectory& reference,
                                         std::span<const int> species_columns,
                                         std::span<const double> scale = {}) {
  if (species_columns.size() != m.output_count())
    throw dimension_error("species subset does not match the network output width");
  if (!scale.empty() && scale.size() != species_columns.size())
    throw dimension_error("scale vector does not match the species subset");
  if (reference.times.empty()) throw dimension_error("reference trajectory is empty");
  for (const int c : species_columns)
    if (c < 0 || static_cast<std::size_t>(c) >= reference.states.cols())
      throw dimension_error("species column outside the reference trajectory");

  std::vector<double> acc(species_columns.size(), 0.0);
  for (std::size_t k = 0; k < reference.times.size(); ++k) {
    const std::vector<double> pred = predict(m, y0, reference.times[k]);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      double d = pred[i] - reference.states(k, static_cast<std::size_t>(species_columns[i]));
      if (!scale.empty()) d /= scale[i];
      acc[i] += d * d;
    }
  }
  for (auto& v : acc) v = std::sqrt(v / static_cast<double>(reference.times.size()));
  return acc;
}

// QSS concentrations recovered from the trained reduced network through the
// algebraic closure. Times where the closure fails are marked invalid and
// left as NaN.
struct QssProfile {
  std::vector<double> times;
  Matrix values;  // row per time, column per QSS slot
  std::vector<char> valid;
  std::size_t failures = 0;
};

inline QssProfile reconstruct_qss_profile(const MlpModel& m, const ReducedSystem& sys,
                                          std::span<const double> y0_red,
                                          std::span<const double> eval_times) {
  if (m.output_count() != sys.non_qss_count())
    throw dimension_error("network output width does not match the reduced system");
  QssProfile out;
  out.times.assign(eval_times.begin(), eval_times.end());
  out.values = Matrix(eval_times.size(), sys.qss_count());
  out.valid.assign(eval_times.size(), 0);
  ClosureCache cache;
  for (std::size_t k = 0; k < eval_times.size(); ++k) {
    const std::vector<double> pred = predict(m, y0_red, eval_times[k]);
    const auto [qss, report] = solve_qss_closure(sys, eval_times[k], pred, &cache);
    for (std::size_t a = 0; a < sys.qss_count(); ++a)
      out.values(k, a) = report.converged ? qss[a] : std::numeric_limits<double>::quiet_NaN();
    out.valid[k] = report.converged ? 1 : 0;
    if (!report.converged) ++out.failures;
  }
  return out;
}

}  // namespace kinnet
