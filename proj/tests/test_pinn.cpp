#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "kinnet/integrate.hpp"
#include "kinnet/mechanism.hpp"
#include "kinnet/network.hpp"
#include "kinnet/pinn.hpp"
#include "kinnet/qssa.hpp"
#include "kinnet/rng.hpp"

using Catch::Approx;
using namespace kinnet;

namespace {

ReducedSystem rober_reduced(ClosureMode mode) {
  return make_reduced_system(builtin_rober(), {{1}, {0, 2}}, mode);
}

ReducedSystem pollu_reduced() {
  const Mechanism m = builtin_pollu();
  QssPartition p;
  p.qss_indices = {2, 4, 5, 9, 10, 13, 15, 17, 18, 19};
  for (int s = 0; s < static_cast<int>(m.species_count()); ++s)
    if (!std::count(p.qss_indices.begin(), p.qss_indices.end(), s))
      p.non_qss_indices.push_back(s);
  return make_reduced_system(m, std::move(p), ClosureMode::newton, 1.5e-4);
}

Mechanism decay_mechanism(double k) {
  Mechanism m;
  m.species_names = {"A"};
  m.reactions.push_back({{{0, 1}}, {}, k});
  m.initial_concentrations = {1.0};
  m.t_span = {0.0, 10.0};
  return m;
}

Mechanism still_mechanism() {
  Mechanism m;
  m.species_names = {"A"};
  m.initial_concentrations = {0.7};
  m.t_span = {0.0, 10.0};
  return m;
}

double median3(double a, double b, double c) {
  std::array<double, 3> v{a, b, c};
  std::sort(v.begin(), v.end());
  return v[1];
}

const double kRoberY2ss = std::sqrt(0.04 / 3e7);

}  // namespace

TEST_CASE("collocation sampling is deterministic and spans the requested range") {
  TrainingConfig cfg;
  cfg.n_collocation = 2500;
  cfg.t_min = 1e-5;
  cfg.t_max = 1e5;
  cfg.sampling = Sampling::log_uniform;

  Rng rng(0, 1);
  const std::vector<double> pts = sample_collocation(cfg, rng);
  REQUIRE(pts.size() == 2500);
  for (const double t : pts) {
    CHECK(t >= 1e-5);
    CHECK(t <= 1e5);
  }
  std::vector<double> sorted = pts;
  std::sort(sorted.begin(), sorted.end());
  const double median = 0.5 * (sorted[1249] + sorted[1250]);
  CHECK(median > 0.9);
  CHECK(median < 1.1);

  Rng again(0, 1);
  CHECK(sample_collocation(cfg, again) == pts);
  Rng other(5, 1);
  CHECK(sample_collocation(cfg, other) != pts);

  cfg.sampling = Sampling::uniform;
  cfg.t_min = 1e-3;
  cfg.t_max = 60.0;
  Rng uni(4, 1);
  for (const double t : sample_collocation(cfg, uni)) {
    CHECK(t >= 1e-3);
    CHECK(t <= 60.0);
  }

  cfg.t_min = cfg.t_max = 2.5;
  Rng flat(9, 1);
  for (const double t : sample_collocation(cfg, flat)) CHECK(t == 2.5);

  cfg.t_min = 0.0;
  Rng bad(0, 1);
  CHECK_THROWS_AS(sample_collocation(cfg, bad), config_error);
}

TEST_CASE("the evaluation grid is geometric with exact endpoints") {
  const std::vector<double> g = log_uniform_grid(1e-2, 1e2, 5);
  REQUIRE(g.size() == 5);
  CHECK(g.front() == 1e-2);
  CHECK(g.back() == 1e2);
  for (std::size_t i = 0; i + 1 < g.size(); ++i)
    CHECK(g[i + 1] / g[i] == Approx(10.0).epsilon(1e-12));
  CHECK_THROWS_AS(log_uniform_grid(0.0, 1.0, 5), config_error);
  CHECK_THROWS_AS(log_uniform_grid(1.0, 1.0, 5), config_error);
  CHECK_THROWS_AS(log_uniform_grid(1e-2, 1e2, 1), config_error);
}

TEST_CASE("an exact solution's residual vanishes") {
  const Mechanism still = still_mechanism();
  MlpModel flat = make_mlp({1, 1, 1}, 0);
  flat.params.assign(flat.params.size(), 0.0);
  const std::vector<double> batch{0.5, 2.0, 40.0};
  const std::vector<double> w{1.0};

  Tape tape(flat.params);
  const LossTerms loss =
      residual_loss(flat, tape, still, batch, w, still.initial_concentrations);
  CHECK(loss.total == 0.0);
  CHECK(tape.value(loss.node) == 0.0);
  CHECK(loss.per_species == std::vector<double>{0.0});

  // Injected exact solution of y' = -k y: the residual is pure rounding noise.
  const Mechanism dec = decay_mechanism(0.3);
  Tape free_tape;
  const auto exact = [](Tape& tp, double t) {
    const TapeVar tv = tp.input(t, 1.0);
    return std::vector<TapeVar>{0.7 * exp((-0.3) * tv)};
  };
  const LossTerms inj = residual_loss(free_tape, dec, batch, w, exact);
  CHECK(inj.total >= 0.0);
  CHECK(inj.total <= 1e-12);
}

TEST_CASE("a single point and species reduce to the closed-form loss") {
  const Mechanism still = still_mechanism();
  MlpModel m = make_mlp({1, 1, 1}, 0);
  m.params = {0.0, 0.0, 0.0, 0.3};  // constant network output, so res = 0.3
  const std::vector<double> batch{0.7};
  const std::vector<double> w{2.5};

  Tape tape(m.params);
  const LossTerms loss = residual_loss(m, tape, still, batch, w, still.initial_concentrations);
  CHECK(loss.total == 2.5 * (0.3 * 0.3));
  CHECK(loss.per_species == std::vector<double>{2.5 * (0.3 * 0.3)});
  CHECK(loss.points_used == 1);
}

TEST_CASE("the full-system loss agrees with an independent dual-number evaluation") {
  const Mechanism rob = builtin_rober();
  const MlpModel m = make_mlp({1, 6, 6, 3}, 31);
  const std::vector<double> batch{1e-3, 0.1, 1.0, 50.0, 2000.0};
  const std::vector<double> w{1.0, 2.0, 0.5};
  const std::vector<double>& y0 = rob.initial_concentrations;

  Tape tape(m.params);
  const LossTerms loss = residual_loss(m, tape, rob, batch, w, y0);

  std::vector<double> per(3, 0.0);
  for (const double t : batch) {
    const std::vector<DualScalar> d = predict_dual(m, y0, t);
    std::vector<double> vals(3);
    for (std::size_t i = 0; i < 3; ++i) vals[i] = d[i].value;
    const std::vector<double> f = mass_action_rhs<double>(rob, vals);
    for (std::size_t i = 0; i < 3; ++i) {
      const double r = d[i].tangent - f[i];
      per[i] += w[i] * (r * r);
    }
  }
  for (auto& v : per) v *= 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < 3; ++i) CHECK(loss.per_species[i] == per[i]);
  CHECK(loss.total == std::accumulate(per.begin(), per.end(), 0.0));
  CHECK(loss.points_used == batch.size());
  CHECK(loss.closure_failures == 0);
}

TEST_CASE("the reduced-system loss agrees with an independent dual-number evaluation") {
  const ReducedSystem sys = rober_reduced(ClosureMode::newton);
  const MlpModel m = make_mlp({1, 5, 5, 2}, 8);
  const std::vector<double> batch{1e-2, 1.0, 30.0, 800.0};
  const std::vector<double> w{1.0, 1.5};
  const std::vector<double> y0{1.0, 0.0};

  Tape tape(m.params);
  const LossTerms loss = residual_loss(m, tape, sys, batch, w, y0);
  CHECK(loss.points_used == batch.size());
  CHECK(loss.closure_failures == 0);

  std::vector<double> per(2, 0.0);
  ClosureCache cache;
  for (const double t : batch) {
    const std::vector<DualScalar> d = predict_dual(m, y0, t);
    std::vector<double> vals(2);
    for (std::size_t j = 0; j < 2; ++j) vals[j] = d[j].value;
    const auto [qss, report] = solve_qss_closure(sys, t, vals, &cache);
    REQUIRE(report.converged);
    (void)closure_jacobian(sys, t, vals, &cache);
    std::vector<double> full(3);
    embed_state(sys, vals, qss, full);
    const std::vector<double> f = mass_action_rhs<double>(sys.base, full);
    for (std::size_t j = 0; j < 2; ++j) {
      const double r =
          d[j].tangent - f[static_cast<std::size_t>(sys.partition.non_qss_indices[j])];
      per[j] += w[j] * (r * r);
    }
  }
  for (auto& v : per) v *= 1.0 / static_cast<double>(batch.size());
  for (std::size_t j = 0; j < 2; ++j) CHECK(loss.per_species[j] == per[j]);
  CHECK(loss.total == std::accumulate(per.begin(), per.end(), 0.0));
}

TEST_CASE("loss gradients match finite differences") {
  const auto fd_check = [](auto&& assemble, MlpModel model) {
    Tape tape(model.params);
    const LossTerms loss = assemble(tape, model);
    const std::vector<double> grad = tape.backward(loss.node).gradient;
    REQUIRE(grad.size() == model.params.size());

    std::vector<double> fd(grad.size());
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      const double keep = model.params[i];
      const double h = 1e-6 * std::max(1.0, std::abs(keep));
      model.params[i] = keep + h;
      Tape hi_tape(model.params);
      const double hi = assemble(hi_tape, model).total;
      model.params[i] = keep - h;
      Tape lo_tape(model.params);
      const double lo = assemble(lo_tape, model).total;
      model.params[i] = keep;
      fd[i] = (hi - lo) / (2.0 * h);
    }
    double scale = 1.0;
    for (const double v : fd) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < grad.size(); ++i)
      CHECK(std::abs(grad[i] - fd[i]) <= 1e-5 * scale);
  };

  const std::vector<double> w3{1.0, 1.0, 1.0};
  const std::vector<double> w2{1.0, 1.0};
  const std::vector<double> w1{1.0};

  SECTION("full system") {
    const Mechanism rob = builtin_rober();
    const std::vector<double> batch{1e-3, 5e-3, 0.02, 0.1};
    fd_check(
        [&](Tape& tp, const MlpModel& mm) {
          return residual_loss(mm, tp, rob, batch, w3, rob.initial_concentrations);
        },
        make_mlp({1, 8, 8, 3}, 17));
  }

  SECTION("reduced system, newton closure") {
    const ReducedSystem sys = rober_reduced(ClosureMode::newton);
    const std::vector<double> batch{1e-2, 0.5, 10.0, 1e3};
    const std::vector<double> y0{1.0, 0.0};
    fd_check(
        [&](Tape& tp, const MlpModel& mm) { return residual_loss(mm, tp, sys, batch, w2, y0); },
        make_mlp({1, 8, 8, 2}, 17));
  }

  SECTION("reduced system, closed-form closure") {
    const ReducedSystem sys = rober_reduced(ClosureMode::closed_form_rober);
    const std::vector<double> batch{1e-2, 0.5, 10.0, 1e3};
    const std::vector<double> y0{1.0, 0.0};
    fd_check(
        [&](Tape& tp, const MlpModel& mm) { return residual_loss(mm, tp, sys, batch, w2, y0); },
        make_mlp({1, 8, 8, 2}, 23));
  }

  SECTION("free network with the initial-condition penalty") {
    const Mechanism dec = decay_mechanism(0.5);
    const std::vector<double> batch{0.3, 1.2};
    fd_check(
        [&](Tape& tp, const MlpModel& mm) {
          LossTerms loss =
              residual_loss(mm, tp, dec, batch, w1, dec.initial_concentrations);
          add_ic_penalty(mm, tp, dec.initial_concentrations, w1, loss);
          return loss;
        },
        make_mlp({1, 4, 4, 1}, 9, OutputTransform::none));
  }
}

TEST_CASE("adam follows the frozen update rule") {
  std::vector<double> p{0.0};
  AdamState st;
  adam_step(p, std::vector<double>{1.0}, st, 1e-3);
  CHECK(p[0] == -(1e-3 / (1.0 + 1e-8)));
  CHECK(std::abs(p[0] - (-9.99999995e-4)) <= 1e-11);
  CHECK(st.step == 1);

  std::vector<double> q{0.4, -1.2};
  AdamState qst;
  for (int i = 0; i < 3; ++i) adam_step(q, std::vector<double>{0.0, 0.0}, qst, 1e-3);
  CHECK(q == std::vector<double>{0.4, -1.2});

  // Identical gradient streams give identical trajectories.
  Rng g1(77, 0), g2(77, 0);
  std::vector<double> a{0.1, 0.2, 0.3}, b{0.1, 0.2, 0.3};
  AdamState sa, sb;
  for (int i = 0; i < 25; ++i) {
    std::vector<double> ga(3), gb(3);
    for (auto& v : ga) v = g1.uniform(-1.0, 1.0);
    for (auto& v : gb) v = g2.uniform(-1.0, 1.0);
    adam_step(a, ga, sa, 2e-3);
    adam_step(b, gb, sb, 2e-3);
  }
  CHECK(a == b);

  std::vector<double> r{0.0};
  AdamState rst;
  CHECK_THROWS_AS(adam_step(r, std::vector<double>{1.0, 2.0}, rst, 1e-3), dimension_error);
  const std::vector<double> nan_grad{std::nan("")};
  CHECK_THROWS_AS(adam_step(r, nan_grad, rst, 1e-3), numeric_error);
  CHECK(r[0] == 0.0);
  CHECK(rst.step == 0);
}

TEST_CASE("training reduces the reduced-system loss and reproduces bitwise") {
  const ReducedSystem sys = rober_reduced(ClosureMode::closed_form_rober);
  TrainingConfig cfg;
  cfg.n_collocation = 256;
  cfg.t_min = 1e-5;
  cfg.t_max = 1e5;
  cfg.sampling = Sampling::log_uniform;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-3;
  cfg.max_updates = 1000;
  cfg.species_weights = {1.0, 1.0};
  cfg.record_every = 250;
  cfg.plateau_window = 0;

  std::vector<double> first, last;
  for (const std::uint64_t seed : {1ull, 2ull, 3ull}) {
    cfg.rng_seed = seed;
    const TrainResult res = train(make_mlp({1, 8, 8, 2}, seed), sys, cfg);
    REQUIRE(!res.history.empty());
    CHECK(res.history.front().step == 0);
    CHECK(res.history.back().step == 999);
    CHECK(res.updates_run == 1000);
    first.push_back(res.history.front().total_loss);
    last.push_back(res.history.back().total_loss);
  }
  CHECK(median3(last[0], last[1], last[2]) < median3(first[0], first[1], first[2]));

  cfg.rng_seed = 1;
  const TrainResult once = train(make_mlp({1, 8, 8, 2}, 1), sys, cfg);
  const TrainResult twice = train(make_mlp({1, 8, 8, 2}, 1), sys, cfg);
  CHECK(once.model.params == twice.model.params);
  REQUIRE(once.history.size() == twice.history.size());
  for (std::size_t i = 0; i < once.history.size(); ++i)
    CHECK(once.history[i].total_loss == twice.history[i].total_loss);

  cfg.max_updates = 0;
  const MlpModel fresh = make_mlp({1, 8, 8, 2}, 1);
  const TrainResult idle = train(fresh, sys, cfg);
  CHECK(idle.model.params == fresh.params);
  CHECK(idle.history.empty());
  CHECK(idle.updates_run == 0);
}

TEST_CASE("a stalled run stops on the loss plateau") {
  const ReducedSystem sys = rober_reduced(ClosureMode::closed_form_rober);
  TrainingConfig cfg;
  cfg.n_collocation = 16;
  cfg.t_min = 1e-5;
  cfg.t_max = 1e5;
  cfg.batch_size = 16;  // every batch sees the same points
  cfg.learning_rate = 1e-30;  // loss cannot move, so the plateau must trip
  cfg.max_updates = 5000;
  cfg.species_weights = {1.0, 1.0};
  cfg.record_every = 20;
  cfg.plateau_window = 50;
  cfg.rng_seed = 2;

  const TrainResult res = train(make_mlp({1, 4, 4, 2}, 2), sys, cfg);
  CHECK(res.plateau_stopped);
  CHECK(res.updates_run == 51);
  REQUIRE(!res.history.empty());
  CHECK(res.history.back().step == 50);
}

TEST_CASE("training records keep the decomposition consistent") {
  const Mechanism dec = decay_mechanism(0.5);
  TrainingConfig cfg;
  cfg.n_collocation = 64;
  cfg.t_min = 1e-2;
  cfg.t_max = 5.0;
  cfg.sampling = Sampling::uniform;
  cfg.batch_size = 16;
  cfg.learning_rate = 3e-3;
  cfg.max_updates = 400;
  cfg.species_weights = {1.0};
  cfg.rng_seed = 3;
  cfg.record_every = 100;
  cfg.plateau_window = 0;
  cfg.output_transform = OutputTransform::none;

  std::size_t callbacks = 0;
  const TrainResult res = train(make_mlp({1, 6, 6, 1}, 3, OutputTransform::none), dec, cfg,
                                [&](const LossRecord&) { ++callbacks; });
  REQUIRE(res.history.size() >= 2);
  CHECK(callbacks == res.history.size());
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    const LossRecord& rec = res.history[i];
    CHECK(rec.total_loss ==
          std::accumulate(rec.per_species_loss.begin(), rec.per_species_loss.end(), 0.0));
    CHECK(rec.per_species_loss.size() == 1);
    if (i > 0) {
      CHECK(rec.step > res.history[i - 1].step);
      CHECK(rec.wall_time >= res.history[i - 1].wall_time);
    }
  }
  CHECK(res.history.back().total_loss < res.history.front().total_loss);
}

TEST_CASE("training rejects inconsistent setups") {
  const ReducedSystem sys = rober_reduced(ClosureMode::closed_form_rober);
  TrainingConfig cfg;
  cfg.n_collocation = 64;
  cfg.batch_size = 16;
  cfg.species_weights = {1.0, 1.0};

  CHECK_THROWS_AS(train(make_mlp({1, 4, 4, 3}, 0), sys, cfg), config_error);
  CHECK_THROWS_AS(train(make_mlp({1, 4, 4, 2}, 0, OutputTransform::none), sys, cfg),
                  config_error);

  TrainingConfig bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(train(make_mlp({1, 4, 4, 2}, 0), sys, bad), config_error);
  bad = cfg;
  bad.batch_size = 65;
  CHECK_THROWS_AS(train(make_mlp({1, 4, 4, 2}, 0), sys, bad), config_error);
  bad = cfg;
  bad.species_weights = {1.0};
  CHECK_THROWS_AS(train(make_mlp({1, 4, 4, 2}, 0), sys, bad), config_error);
  bad = cfg;
  bad.species_weights = {1.0, -1.0};
  CHECK_THROWS_AS(train(make_mlp({1, 4, 4, 2}, 0), sys, bad), config_error);
  bad = cfg;
  bad.t_min = -1.0;
  CHECK_THROWS_AS(train(make_mlp({1, 4, 4, 2}, 0), sys, bad), config_error);
  bad = cfg;
  bad.y_ref_scale = {1.0, 0.0};
  CHECK_THROWS_AS(train(make_mlp({1, 4, 4, 2}, 0), sys, bad), config_error);
}

TEST_CASE("rmse evaluation measures deviations from a reference") {
  const MlpModel m = make_mlp({1, 4, 4, 2}, 6);
  const std::vector<double> y0{1.0, 0.0};
  const std::vector<double> grid = log_uniform_grid(1e-2, 1e2, 25);

  SolutionTrajectory ref;
  ref.times = grid;
  ref.states = Matrix(grid.size(), 3);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const std::vector<double> p = predict(m, y0, grid[k]);
    ref.states(k, 0) = p[0];
    ref.states(k, 1) = 7.0;  // unrelated species the subset must skip
    ref.states(k, 2) = p[1];
  }
  const std::vector<int> cols{0, 2};

  const std::vector<double> zero = evaluate_rmse(m, y0, ref, cols);
  CHECK(zero == std::vector<double>{0.0, 0.0});

  SolutionTrajectory shifted = ref;
  for (std::size_t k = 0; k < grid.size(); ++k) shifted.states(k, 2) += 0.25;
  const std::vector<double> off = evaluate_rmse(m, y0, shifted, cols);
  CHECK(off[0] == 0.0);
  CHECK(off[1] == 0.25);

  const std::vector<double> scale{1.0, 0.5};
  const std::vector<double> norm = evaluate_rmse(m, y0, shifted, cols, scale);
  CHECK(norm[1] == 0.5);

  CHECK_THROWS_AS(evaluate_rmse(m, y0, ref, std::vector<int>{0}), dimension_error);
  CHECK_THROWS_AS(evaluate_rmse(m, y0, ref, std::vector<int>{0, 3}), dimension_error);
  CHECK_THROWS_AS(evaluate_rmse(m, y0, ref, std::vector<int>{-1, 2}), dimension_error);
  SolutionTrajectory empty;
  CHECK_THROWS_AS(evaluate_rmse(m, y0, empty, cols), dimension_error);
}

TEST_CASE("qss reconstruction recovers the closure values") {
  MlpModel flat = make_mlp({1, 4, 4, 2}, 0);
  flat.params.assign(flat.params.size(), 0.0);
  const std::vector<double> times{1.0, 10.0, 1e3};

  for (const ClosureMode mode : {ClosureMode::newton, ClosureMode::closed_form_rober}) {
    const ReducedSystem sys = rober_reduced(mode);
    const QssProfile prof =
        reconstruct_qss_profile(flat, sys, std::vector<double>{1.0, 0.0}, times);
    CHECK(prof.failures == 0);
    for (std::size_t k = 0; k < times.size(); ++k) {
      CHECK(prof.valid[k] == 1);
      CHECK(prof.values(k, 0) == Approx(kRoberY2ss).epsilon(1e-9));
    }
  }

  const ReducedSystem cf = rober_reduced(ClosureMode::closed_form_rober);
  const QssProfile at_zero =
      reconstruct_qss_profile(flat, cf, std::vector<double>{0.0, 0.0}, times);
  for (std::size_t k = 0; k < times.size(); ++k) CHECK(at_zero.values(k, 0) == 0.0);

  // The pollution model's projected initial state admits no closure, so a
  // zero network fails at every requested time.
  const ReducedSystem pol = pollu_reduced();
  MlpModel pflat = make_mlp({1, 4, 4, 10}, 0);
  pflat.params.assign(pflat.params.size(), 0.0);
  const QssProfile none =
      reconstruct_qss_profile(pflat, pol, reduced_initial_state(pol), times);
  CHECK(none.failures == times.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    CHECK(none.valid[k] == 0);
    CHECK(std::isnan(none.values(k, 0)));
  }
}

TEST_CASE("the reduced loss counts unattainable closure points") {
  const ReducedSystem pol = pollu_reduced();
  const std::vector<double> y0 = reduced_initial_state(pol);
  const std::vector<double> w(10, 1.0);

  MlpModel stuck = make_mlp({1, 4, 4, 10}, 0);
  stuck.params.assign(stuck.params.size(), 0.0);
  Tape dead(stuck.params);
  CHECK_THROWS_AS(
      residual_loss(stuck, dead, pol, std::vector<double>{0.5, 2.0}, w, y0),
      numeric_error);

  // A positive NO2 prediction switches the radical sinks back on, so the
  // closure succeeds everywhere.
  MlpModel live = make_mlp({1, 1, 10}, 0);
  live.params.assign(live.params.size(), 0.0);
  live.params[12] = 0.05;  // output bias of the first species slot (NO2)
  Tape tape(live.params);
  const std::vector<double> batch{0.5, 2.0, 10.0};
  const LossTerms loss = residual_loss(live, tape, pol, batch, w, y0);
  CHECK(loss.points_used == 3);
  CHECK(loss.closure_failures == 0);
  CHECK(std::isfinite(loss.total));
  const GradientResult grads = tape.backward(loss.node);
  for (const double g : grads.gradient) CHECK(std::isfinite(g));
}
