#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kinnet/config.hpp"
#include "kinnet/csv.hpp"
#include "kinnet/integrate.hpp"
#include "kinnet/manifest.hpp"
#include "kinnet/mechanism.hpp"
#include "kinnet/network.hpp"
#include "kinnet/pinn.hpp"
#include "kinnet/qssa.hpp"
#include "kinnet/svgplot.hpp"
#include "kinnet/text.hpp"

namespace {

using namespace kinnet;

constexpr const char* kUsage = R"(usage: kinnet <command> [--config <path>] [options]

commands:
  simulate   integrate the full or QSS-reduced system, write a trajectory CSV
  reduce     select QSS species, write the partition and a closure self-test
  train      fit a network to the kinetics residual, write checkpoint + loss CSV
  evaluate   score a checkpoint (or replay) against a reference trajectory CSV
  sweep      train a grid of architectures x seeds, write a median-RMSE table
  stiffness  eigenvalue spectrum and step-count comparison along a trajectory
  plot       render CSV columns as an SVG line plot

options are either --section.key=value overrides of the config file or the
shortcuts --mechanism --method --rtol --atol --t-start --t-end --reduced
--output-points --output-spacing --threshold --closure --widths --mode --seed
--max-updates --learning-rate --sweep-seeds --sweep-grid --out --emit-svg.
evaluate takes --checkpoint <path|oracle> --reference <csv> [--species a,b|all];
plot takes input CSV paths plus --output --title --x-label --y-label --log-x --log-y.

exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 sweep finished with failed cells.
)";

// ---------------------------------------------------------------------------
// invocation parsing

struct Invocation {
  std::string command;
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;  // section.key -> value
  std::vector<std::string> positionals;
  std::map<std::string, std::string> local;  // command-specific flags
  bool log_x = false;
  bool log_y = false;
};

const std::map<std::string, std::string>& alias_map() {
  static const std::map<std::string, std::string> m{
      {"mechanism", "mechanism.source"},
      {"method", "solver.method"},
      {"rtol", "solver.rtol"},
      {"atol", "solver.atol"},
      {"t-start", "solver.t_start"},
      {"t-end", "solver.t_end"},
      {"reduced", "solver.reduced"},
      {"output-points", "solver.output_points"},
      {"output-spacing", "solver.output_spacing"},
      {"threshold", "qssa.threshold"},
      {"closure", "qssa.closure"},
      {"widths", "network.widths"},
      {"mode", "training.mode"},
      {"seed", "training.rng_seed"},
      {"max-updates", "training.max_updates"},
      {"learning-rate", "training.learning_rate"},
      {"sweep-seeds", "training.sweep_seeds"},
      {"sweep-grid", "training.sweep_grid"},
      {"out", "output.directory"},
      {"emit-svg", "output.emit_svg"},
  };
  return m;
}

bool is_boolean_flag(const std::string& name) { return name == "reduced" || name == "emit-svg"; }

bool command_local_flag(const std::string& command, const std::string& name) {
  if (command == "evaluate")
    return name == "checkpoint" || name == "reference" || name == "species";
  if (command == "plot")
    return name == "output" || name == "title" || name == "x-label" || name == "y-label";
  return false;
}

Invocation parse_args(int argc, char** argv) {
  if (argc < 2) throw config_error("missing command\n" + std::string(kUsage));
  Invocation inv;
  inv.command = argv[1];
  if (inv.command == "--help" || inv.command == "-h" || inv.command == "help") {
    std::fputs(kUsage, stdout);
    std::exit(0);
  }
  static const std::vector<std::string> known{"simulate", "reduce",    "train", "evaluate",
                                              "sweep",    "stiffness", "plot"};
  if (std::find(known.begin(), known.end(), inv.command) == known.end())
    throw config_error("unknown command '" + inv.command + "'\n" + std::string(kUsage));

  for (int i = 2; i < argc; ++i) {
    std::string tok = argv[i];
    if (tok.rfind("--", 0) != 0) {
      inv.positionals.push_back(std::move(tok));
      continue;
    }
    std::string name = tok.substr(2);
    std::optional<std::string> value;
    if (const auto eq = name.find('='); eq != std::string::npos) {
      value = name.substr(eq + 1);
      name = name.substr(0, eq);
    }
    auto take_value = [&](bool optional_true) -> std::string {
      if (value) return *value;
      const bool next_is_value = i + 1 < argc && std::string_view(argv[i + 1]).rfind("--", 0) != 0;
      if (next_is_value) return argv[++i];
      if (optional_true) return "true";
      throw config_error("option --" + name + " needs a value");
    };

    if (inv.command == "plot" && (name == "log-x" || name == "log-y")) {
      (name == "log-x" ? inv.log_x : inv.log_y) = true;
      continue;
    }
    if (name == "config") {
      inv.config_path = take_value(false);
      continue;
    }
    if (command_local_flag(inv.command, name)) {
      inv.local[name] = take_value(false);
      continue;
    }
    if (name.find('.') != std::string::npos) {
      const auto dot = name.find('.');
      inv.overrides.emplace_back(name, take_value(false));
      if (dot == 0 || dot + 1 == name.size())
        throw config_error("override '" + name + "' is not of the form section.key");
      continue;
    }
    const auto it = alias_map().find(name);
    if (it == alias_map().end()) throw config_error("unknown option --" + name);
    inv.overrides.emplace_back(it->second, take_value(is_boolean_flag(name)));
  }
  return inv;
}

ExperimentConfig load_config(const Invocation& inv) {
  IniDoc doc;
  if (!inv.config_path.empty()) {
    try {
      doc = parse_ini(read_text_file(inv.config_path));
    } catch (const io_error& e) {
      throw config_error(std::string(e.what()));
    }
  }
  for (const auto& [path, value] : inv.overrides) {
    const auto dot = path.find('.');
    doc.set(path.substr(0, dot), path.substr(dot + 1), value);
  }
  return load_experiment_config(std::move(doc));
}

// ---------------------------------------------------------------------------
// shared plumbing

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct OutputWriter {
  std::filesystem::path dir;
  RunManifest manifest;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  OutputWriter(const ExperimentConfig& cfg, std::string command) {
    dir = cfg.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory '" + cfg.out_dir + "': " + ec.message());
    manifest.command = std::move(command);
    manifest.rng_seed = cfg.seed;
    manifest.config_text = serialize_ini(cfg.doc);
  }

  std::string write(const std::string& name, std::string_view content) {
    const std::string path = (dir / name).string();
    write_text_file(path, content);
    manifest.record(name, content);
    return path;
  }

  void finish() {
    manifest.wall_seconds = seconds_since(started);
    write_text_file((dir / "manifest.json").string(), manifest_to_json(manifest));
  }
};

Mechanism load_mechanism(const ExperimentConfig& cfg) {
  if (cfg.mechanism == "builtin:rober") return builtin_rober();
  if (cfg.mechanism == "builtin:pollu") return builtin_pollu();
  if (cfg.mechanism.rfind("builtin:", 0) == 0)
    throw config_error("unknown builtin mechanism '" + cfg.mechanism +
                       "' (have builtin:rober, builtin:pollu)");
  try {
    return parse_mechanism(read_text_file(cfg.mechanism));
  } catch (const io_error& e) {
    throw config_error(std::string(e.what()));
  }
}

std::pair<double, double> resolve_span(const ExperimentConfig& cfg, const Mechanism& mech) {
  const double t0 = cfg.t_start.value_or(mech.t_span.first);
  const double t1 = cfg.t_end.value_or(mech.t_span.second);
  if (!(t0 < t1)) throw config_error("solver span is empty: t_start must be below t_end");
  return {t0, t1};
}

SolverConfig solver_config(const ExperimentConfig& cfg) {
  SolverConfig sc;
  sc.rtol = cfg.rtol;
  sc.atol = cfg.atol;
  sc.method = cfg.method == "bdf" ? Method::bdf : Method::dopri5;
  return sc;
}

std::vector<double> build_output_grid(const ExperimentConfig& cfg, std::pair<double, double> span) {
  const std::size_t n = cfg.output_points;
  if (n < 2) throw config_error("[solver] output_points must be 0 or at least 2");
  std::vector<double> out;
  if (!cfg.output_log_spacing) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = span.first + (span.second - span.first) * static_cast<double>(i) /
                                static_cast<double>(n - 1);
    out.back() = span.second;
    return out;
  }
  if (span.first > 0.0) return log_uniform_grid(span.first, span.second, n);
  if (n == 2) return {span.first, span.second};
  // A log grid cannot reach zero; keep the exact start and spread the rest
  // from a tiny fraction of the end time.
  out = log_uniform_grid(span.second * 1e-10, span.second, n - 1);
  out.insert(out.begin(), span.first);
  return out;
}

SolutionTrajectory solve_full(const Mechanism& mech, const SolverConfig& sc,
                              std::pair<double, double> span,
                              std::span<const double> output_times = {}) {
  if (sc.method == Method::bdf)
    return integrate_bdf(make_rhs(mech), make_jacobian(mech), mech.initial_concentrations, span,
                         sc, output_times);
  return integrate_dopri5(make_rhs(mech), mech.initial_concentrations, span, sc, output_times);
}

// Fixed reference solve backing partition selection and training weights;
// independent of the user's solver knobs so the partition is stable.
SolutionTrajectory partition_reference(const Mechanism& mech) {
  SolverConfig sc;
  sc.rtol = 1e-8;
  sc.atol = {1e-12};
  sc.method = Method::bdf;
  return solve_full(mech, sc, mech.t_span);
}

ClosureMode closure_mode(const ExperimentConfig& cfg) {
  return cfg.closure == "closed-form" ? ClosureMode::closed_form_rober : ClosureMode::newton;
}

struct StiffSetup {
  SolutionTrajectory reference;  // full system over the mechanism span
  QssPartition partition;
  ReducedSystem sys;
};

StiffSetup make_stiff_setup(const Mechanism& mech, const ExperimentConfig& cfg) {
  StiffSetup s;
  s.reference = partition_reference(mech);
  s.partition = select_qss_species(mech, s.reference, cfg.qss_threshold);
  if (s.partition.qss_indices.empty())
    throw config_error("threshold " + g17(cfg.qss_threshold) +
                       " selects no QSS species; nothing to reduce");
  s.sys = make_reduced_system(mech, s.partition, closure_mode(cfg), cfg.qss_threshold);
  return s;
}

JacFn make_fd_jacobian(RhsFn rhs) {
  return [rhs = std::move(rhs)](double t, std::span<const double> y, Matrix& jac) {
    const std::size_t n = y.size();
    jac = Matrix(n, n);
    std::vector<double> yp(y.begin(), y.end()), ym(y.begin(), y.end()), fp(n), fm(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = 1e-7 * std::max(std::abs(y[j]), 1e-6);
      yp[j] = y[j] + h;
      ym[j] = y[j] - h;
      rhs(t, yp, fp);
      rhs(t, ym, fm);
      for (std::size_t i = 0; i < n; ++i) jac(i, j) = (fp[i] - fm[i]) / (2.0 * h);
      yp[j] = y[j];
      ym[j] = y[j];
    }
  };
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

std::vector<std::string> pick_names(const std::vector<std::string>& all,
                                    std::span<const int> idx) {
  std::vector<std::string> out;
  for (const int i : idx) out.push_back(all[static_cast<std::size_t>(i)]);
  return out;
}

// Training defaults appropriate to the mechanism; file keys override these.
// The pollution model trains on normalized residuals (weights 1/peak^2 from
// the reference) over uniform time samples, the Robertson recipe keeps unit
// weights and log-uniform sampling over [1e-5, 1e5].
TrainingConfig training_defaults(const ExperimentConfig& cfg, const Mechanism& mech,
                                 std::span<const int> trained_cols,
                                 const SolutionTrajectory* reference) {
  TrainingConfig base;
  base.species_weights.assign(trained_cols.size(), 1.0);
  if (cfg.mechanism == "builtin:pollu") {
    base.t_min = 1e-3;
    base.t_max = mech.t_span.second;
    base.sampling = Sampling::uniform;
    if (reference) {
      for (std::size_t j = 0; j < trained_cols.size(); ++j) {
        double peak = 0.0;
        for (std::size_t r = 0; r < reference->times.size(); ++r)
          peak = std::max(peak,
                          std::abs(reference->states(r, static_cast<std::size_t>(trained_cols[j]))));
        if (peak > 0.0) base.species_weights[j] = 1.0 / (peak * peak);
      }
    }
  } else if (cfg.mechanism != "builtin:rober") {
    base.t_max = mech.t_span.second;
    base.t_min = std::min(1e-5, base.t_max * 1e-8);
  }
  return cfg.training.apply(base);
}

std::string loss_history_csv(const std::vector<LossRecord>& history,
                             const std::vector<std::string>& trained_names) {
  std::string out = "step,total_loss";
  for (const auto& name : trained_names) out += ",loss_" + name;
  out += "\n";
  for (const auto& rec : history) {
    out += std::to_string(rec.step) + "," + g17(rec.total_loss);
    for (const double v : rec.per_species_loss) out += "," + g17(v);
    out += "\n";
  }
  return out;
}

void warn_dropped(const PlotResult& plot, const std::string& what) {
  if (plot.dropped_points)
    std::fprintf(stderr, "warning: dropped %zu point%s of %s not representable on the axes\n",
                 plot.dropped_points, plot.dropped_points == 1 ? "" : "s", what.c_str());
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const ExperimentConfig& cfg) {
  const Mechanism mech = load_mechanism(cfg);
  OutputWriter out(cfg, "simulate");
  const auto span = resolve_span(cfg, mech);
  const SolverConfig sc = solver_config(cfg);

  SolutionTrajectory traj;
  std::vector<std::string> names;
  const auto t_solve = std::chrono::steady_clock::now();
  if (!cfg.reduced) {
    std::vector<double> grid;
    if (cfg.output_points) grid = build_output_grid(cfg, span);
    traj = solve_full(mech, sc, span, grid);
    names = mech.species_names;
  } else {
    const StiffSetup setup = make_stiff_setup(mech, cfg);
    const ReducedStart start = consistent_reduced_start(setup.sys, setup.reference);
    const std::pair<double, double> red_span{std::max(span.first, start.t), span.second};
    std::vector<double> grid;
    if (cfg.output_points) grid = build_output_grid(cfg, red_span);
    SolutionTrajectory red;
    if (sc.method == Method::bdf) {
      const RhsFn rhs = make_reduced_rhs(setup.sys);
      red = integrate_bdf(rhs, make_fd_jacobian(rhs), start.y, red_span, sc, grid);
    } else {
      red = integrate_dopri5(make_reduced_rhs(setup.sys), start.y, red_span, sc, grid);
    }
    const Matrix qss = closure_profile(setup.sys, red);
    traj.times = red.times;
    traj.stats = red.stats;
    traj.states = Matrix(red.times.size(), mech.species_count());
    for (std::size_t r = 0; r < red.times.size(); ++r) {
      for (std::size_t j = 0; j < setup.sys.non_qss_count(); ++j)
        traj.states(r, static_cast<std::size_t>(setup.partition.non_qss_indices[j])) = red(r, j);
      for (std::size_t a = 0; a < setup.sys.qss_count(); ++a)
        traj.states(r, static_cast<std::size_t>(setup.partition.qss_indices[a])) = qss(r, a);
    }
    names = mech.species_names;
  }
  out.manifest.timings.emplace_back("solve", seconds_since(t_solve));

  const std::string csv = trajectory_to_csv(traj, names);
  out.write("trajectory.csv", csv);
  if (cfg.emit_svg) {
    std::vector<PlotSeries> series(names.size());
    for (std::size_t s = 0; s < names.size(); ++s) {
      series[s].label = names[s];
      series[s].x = traj.times;
      for (std::size_t r = 0; r < traj.times.size(); ++r)
        series[s].y.push_back(traj.states(r, s));
    }
    PlotOptions popt;
    popt.title = cfg.reduced ? "reduced trajectory" : "trajectory";
    popt.x_label = "t";
    popt.y_label = "concentration";
    popt.log_x = cfg.output_log_spacing;
    const PlotResult plot = render_line_plot(series, popt);
    warn_dropped(plot, "trajectory.svg");
    out.write("trajectory.svg", plot.svg);
  }
  out.finish();
  std::printf("wrote %s: %zu rows, %zu species, %ld accepted steps\n",
              (out.dir / "trajectory.csv").string().c_str(), traj.times.size(), names.size(),
              traj.stats.accepted_steps);
  return 0;
}

// ---------------------------------------------------------------------------
// reduce

int cmd_reduce(const ExperimentConfig& cfg) {
  const Mechanism mech = load_mechanism(cfg);
  OutputWriter out(cfg, "reduce");
  const auto t_ref = std::chrono::steady_clock::now();
  const SolutionTrajectory reference = partition_reference(mech);
  out.manifest.timings.emplace_back("reference", seconds_since(t_ref));

  const QssPartition partition = select_qss_species(mech, reference, cfg.qss_threshold);
  if (partition.qss_indices.empty())
    throw config_error("threshold " + g17(cfg.qss_threshold) +
                       " selects no QSS species; empty partitions are rejected");
  const ReducedSystem sys =
      make_reduced_system(mech, partition, closure_mode(cfg), cfg.qss_threshold);

  std::string qss_line = "QSS:";
  for (const int s : partition.qss_indices)
    qss_line += " " + mech.species_names[static_cast<std::size_t>(s)];

  std::string report = qss_line + "\n";
  report += "threshold = " + g17(cfg.qss_threshold) + "\n";
  report += "closure = " + cfg.closure + "\n\n";
  for (std::size_t s = 0; s < mech.species_count(); ++s) {
    double peak = reference.states(0, s);
    for (std::size_t r = 1; r < reference.times.size(); ++r)
      peak = std::max(peak, reference.states(r, s));
    const bool is_qss = std::find(partition.qss_indices.begin(), partition.qss_indices.end(),
                                  static_cast<int>(s)) != partition.qss_indices.end();
    report += "max " + mech.species_names[s] + " = " + g17(peak) + (is_qss ? "  [qss]\n" : "\n");
  }

  // Closure self-test: feed reference non-QSS states back through the
  // algebraic solve and compare the recovered QSS concentrations.
  std::size_t checked = 0, converged = 0;
  double worst_residual = 0.0, worst_rel = 0.0;
  const std::size_t stride = std::max<std::size_t>(1, reference.times.size() / 25);
  ClosureCache cache;
  for (std::size_t r = 0; r < reference.times.size(); r += stride) {
    std::vector<double> nq(sys.non_qss_count());
    for (std::size_t j = 0; j < nq.size(); ++j)
      nq[j] = std::max(0.0, reference.states(r, static_cast<std::size_t>(partition.non_qss_indices[j])));
    const auto [qss, rep] = solve_qss_closure(sys, reference.times[r], nq, &cache);
    ++checked;
    if (!rep.converged) continue;
    ++converged;
    worst_residual = std::max(worst_residual, rep.final_residual_norm);
    for (std::size_t a = 0; a < qss.size(); ++a) {
      const double ref = reference.states(r, static_cast<std::size_t>(partition.qss_indices[a]));
      if (std::abs(ref) > 0.0)
        worst_rel = std::max(worst_rel, std::abs(qss[a] - ref) / std::abs(ref));
    }
  }
  report += "\nclosure self-test: " + std::to_string(converged) + "/" + std::to_string(checked) +
            " points converged, max residual = " + g17(worst_residual) +
            ", max rel deviation from reference = " + g17(worst_rel) + "\n";
  if (converged == 0) {
    std::fputs(report.c_str(), stderr);
    throw numeric_error("closure self-test failed at every sampled point");
  }

  out.write("reduction.txt", report);
  out.write("reduced.mech", serialize_reduced(mech, partition));
  out.finish();
  std::fputs((qss_line + "\n").c_str(), stdout);
  std::printf("wrote %s and reduced.mech (%zu QSS / %zu total species)\n",
              (out.dir / "reduction.txt").string().c_str(), sys.qss_count(),
              mech.species_count());
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const ExperimentConfig& cfg) {
  const Mechanism mech = load_mechanism(cfg);
  OutputWriter out(cfg, "train");

  TrainResult result;
  std::vector<std::string> trained_names;
  const auto t_setup = std::chrono::steady_clock::now();
  if (cfg.train_mode == TrainMode::stiff) {
    const StiffSetup setup = make_stiff_setup(mech, cfg);
    trained_names = pick_names(mech.species_names, setup.partition.non_qss_indices);
    TrainingConfig tc =
        training_defaults(cfg, mech, setup.partition.non_qss_indices, &setup.reference);
    tc.rng_seed = cfg.seed;
    const MlpModel model = make_mlp(resolve_widths(cfg.widths, setup.sys.non_qss_count()),
                                    cfg.seed, tc.output_transform);
    out.manifest.timings.emplace_back("setup", seconds_since(t_setup));
    const auto t_train = std::chrono::steady_clock::now();
    result = train(model, setup.sys, tc);
    out.manifest.timings.emplace_back("train", seconds_since(t_train));
  } else {
    std::vector<int> all(mech.species_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    trained_names = mech.species_names;
    std::optional<SolutionTrajectory> reference;
    if (cfg.mechanism == "builtin:pollu") reference = partition_reference(mech);
    TrainingConfig tc = training_defaults(cfg, mech, all, reference ? &*reference : nullptr);
    tc.rng_seed = cfg.seed;
    const MlpModel model =
        make_mlp(resolve_widths(cfg.widths, mech.species_count()), cfg.seed, tc.output_transform);
    out.manifest.timings.emplace_back("setup", seconds_since(t_setup));
    const auto t_train = std::chrono::steady_clock::now();
    result = train(model, mech, tc);
    out.manifest.timings.emplace_back("train", seconds_since(t_train));
  }

  out.write("checkpoint.txt", serialize_checkpoint(result.model));
  out.write("loss.csv", loss_history_csv(result.history, trained_names));
  if (cfg.emit_svg && !result.history.empty()) {
    PlotSeries series{"total loss", {}, {}};
    for (const auto& rec : result.history) {
      series.x.push_back(static_cast<double>(rec.step));
      series.y.push_back(rec.total_loss);
    }
    PlotOptions popt;
    popt.title = "training loss";
    popt.x_label = "update";
    popt.y_label = "loss";
    popt.log_y = true;
    const PlotResult plot = render_line_plot(std::span(&series, 1), popt);
    warn_dropped(plot, "loss.svg");
    out.write("loss.svg", plot.svg);
  }
  out.finish();
  const double final_loss = result.history.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                   : result.history.back().total_loss;
  std::printf("trained %zu updates%s, final loss %.6g; wrote %s\n", result.updates_run,
              result.plateau_stopped ? " (plateau stop)" : "", final_loss,
              (out.dir / "checkpoint.txt").string().c_str());
  if (result.closure_failures)
    std::fprintf(stderr, "note: %zu collocation points skipped for closure failures\n",
                 result.closure_failures);
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalSeries {
  std::string name;
  std::vector<double> predicted;  // aligned with the evaluation grid
  int ref_column = -1;
  std::size_t skipped = 0;  // rows without a usable prediction (closure failures)
};

int cmd_evaluate(const ExperimentConfig& cfg, const Invocation& inv) {
  const auto need = [&](const char* flag) -> std::string {
    const auto it = inv.local.find(flag);
    if (it == inv.local.end())
      throw config_error(std::string("evaluate needs --") + flag);
    return it->second;
  };
  const std::string reference_path = need("reference");
  const std::string checkpoint = need("checkpoint");

  std::vector<std::string> ref_names;
  SolutionTrajectory ref;
  try {
    ref = trajectory_from_csv(read_text_file(reference_path), &ref_names);
  } catch (const io_error& e) {
    throw config_error(std::string(e.what()));
  }
  if (ref.times.empty()) throw config_error("reference trajectory has no rows");

  // The evaluation grid is the reference's own rows, optionally thinned to
  // [solver] output_points evenly strided ones.
  std::vector<std::size_t> rows;
  if (cfg.output_points) {
    const std::size_t n = cfg.output_points;
    if (n < 2) throw config_error("[solver] output_points must be 0 or at least 2");
    if (n > ref.times.size())
      throw config_error("grid override asks for " + std::to_string(n) +
                         " points but the reference has " + std::to_string(ref.times.size()));
    for (std::size_t k = 0; k < n; ++k)
      rows.push_back((k * (ref.times.size() - 1) + (n - 1) / 2) / (n - 1));
  } else {
    rows.resize(ref.times.size());
    for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = k;
  }
  std::vector<double> grid_times;
  for (const std::size_t r : rows) grid_times.push_back(ref.times[r]);

  OutputWriter out(cfg, "evaluate");
  std::vector<EvalSeries> series;
  const auto t_eval = std::chrono::steady_clock::now();

  if (checkpoint == "oracle") {
    for (std::size_t c = 0; c < ref_names.size(); ++c) {
      EvalSeries s;
      s.name = ref_names[c];
      s.ref_column = static_cast<int>(c);
      for (const std::size_t r : rows) s.predicted.push_back(ref.states(r, c));
      series.push_back(std::move(s));
    }
  } else {
    MlpModel model;
    try {
      model = parse_checkpoint(read_text_file(checkpoint));
    } catch (const io_error& e) {
      throw config_error(std::string(e.what()));
    }
    const Mechanism mech = load_mechanism(cfg);
    auto ref_column_of = [&](const std::string& name) {
      for (std::size_t c = 0; c < ref_names.size(); ++c)
        if (ref_names[c] == name) return static_cast<int>(c);
      throw config_error("species-name mismatch: reference has no column '" + name + "'");
    };

    if (model.output_count() == mech.species_count()) {
      for (std::size_t i = 0; i < mech.species_count(); ++i) {
        EvalSeries s;
        s.name = mech.species_names[i];
        s.ref_column = ref_column_of(s.name);
        series.push_back(std::move(s));
      }
      for (const double t : grid_times) {
        const std::vector<double> pred = predict(model, mech.initial_concentrations, t);
        for (std::size_t i = 0; i < series.size(); ++i) series[i].predicted.push_back(pred[i]);
      }
    } else {
      const StiffSetup setup = make_stiff_setup(mech, cfg);
      if (model.output_count() != setup.sys.non_qss_count())
        throw config_error("checkpoint outputs " + std::to_string(model.output_count()) +
                           " species but the mechanism trains " +
                           std::to_string(setup.sys.non_qss_count()) +
                           " (full) or " + std::to_string(mech.species_count()) + " (regular)");
      const std::vector<double> y0r = reduced_initial_state(setup.sys);
      for (const int c : setup.partition.non_qss_indices) {
        EvalSeries s;
        s.name = mech.species_names[static_cast<std::size_t>(c)];
        s.ref_column = ref_column_of(s.name);
        series.push_back(std::move(s));
      }
      for (const double t : grid_times) {
        const std::vector<double> pred = predict(model, y0r, t);
        for (std::size_t i = 0; i < series.size(); ++i) series[i].predicted.push_back(pred[i]);
      }

      if (inv.local.count("species")) {
        // Reconstructing QSS species goes through the closure; only do the
        // work when the request can name one.
        const QssProfile profile = reconstruct_qss_profile(model, setup.sys, y0r, grid_times);
        for (std::size_t a = 0; a < setup.sys.qss_count(); ++a) {
          EvalSeries s;
          s.name = mech.species_names[static_cast<std::size_t>(setup.partition.qss_indices[a])];
          s.ref_column = ref_column_of(s.name);
          for (std::size_t k = 0; k < grid_times.size(); ++k) {
            s.predicted.push_back(profile.values(k, a));
            if (!profile.valid[k]) ++s.skipped;
          }
          series.push_back(std::move(s));
        }
        if (profile.failures)
          std::fprintf(stderr, "note: closure failed at %zu of %zu evaluation times\n",
                       profile.failures, grid_times.size());
      }
    }
  }

  // Optional species filter.
  if (const auto it = inv.local.find("species"); it != inv.local.end() && it->second != "all") {
    std::vector<std::string> keep;
    for (const auto piece : split_char(it->second, ',')) keep.emplace_back(trim(piece));
    std::vector<EvalSeries> filtered;
    for (const auto& name : keep) {
      bool found = false;
      for (auto& s : series)
        if (s.name == name) {
          filtered.push_back(std::move(s));
          found = true;
          break;
        }
      if (!found) throw config_error("species '" + name + "' is not available in this evaluation");
    }
    series = std::move(filtered);
  }
  if (series.empty()) throw config_error("no species left to evaluate");

  std::string rmse_csv = "species,rmse,normalized_rmse\n";
  std::string pred_csv = "t";
  for (const auto& s : series) pred_csv += "," + s.name;
  pred_csv += "\n";
  for (std::size_t k = 0; k < grid_times.size(); ++k) {
    pred_csv += g17(grid_times[k]);
    for (const auto& s : series) pred_csv += "," + g17(s.predicted[k]);
    pred_csv += "\n";
  }
  for (const auto& s : series) {
    double acc = 0.0, peak = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < grid_times.size(); ++k) {
      const double ref_v = ref.states(rows[k], static_cast<std::size_t>(s.ref_column));
      peak = std::max(peak, std::abs(ref_v));
      if (!std::isfinite(s.predicted[k])) continue;
      const double d = s.predicted[k] - ref_v;
      acc += d * d;
      ++used;
    }
    const double rmse =
        used ? std::sqrt(acc / static_cast<double>(used)) : std::numeric_limits<double>::quiet_NaN();
    const double norm = peak > 0.0 ? rmse / peak : std::numeric_limits<double>::quiet_NaN();
    rmse_csv += s.name + "," + g17(rmse) + "," + g17(norm) + "\n";
    std::printf("rmse %s = %.6g (normalized %.6g)\n", s.name.c_str(), rmse, norm);
  }
  out.manifest.timings.emplace_back("evaluate", seconds_since(t_eval));
  out.write("rmse.csv", rmse_csv);
  out.write("prediction.csv", pred_csv);
  out.finish();
  std::printf("wrote %s (%zu grid points)\n", (out.dir / "rmse.csv").string().c_str(),
              grid_times.size());
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

int cmd_sweep(const ExperimentConfig& cfg) {
  const Mechanism mech = load_mechanism(cfg);
  OutputWriter out(cfg, "sweep");
  if (cfg.sweep_grid.empty()) throw config_error("sweep grid is empty");

  const bool stiff = cfg.train_mode == TrainMode::stiff;
  std::optional<StiffSetup> setup;
  std::vector<int> trained_cols;
  if (stiff) {
    setup.emplace(make_stiff_setup(mech, cfg));
    trained_cols = setup->partition.non_qss_indices;
  } else {
    trained_cols.resize(mech.species_count());
    for (std::size_t i = 0; i < trained_cols.size(); ++i) trained_cols[i] = static_cast<int>(i);
  }
  const std::vector<std::string> trained_names = pick_names(mech.species_names, trained_cols);

  const SolutionTrajectory* weight_ref = setup ? &setup->reference : nullptr;
  std::optional<SolutionTrajectory> regular_ref;
  if (!stiff && cfg.mechanism == "builtin:pollu") {
    regular_ref = partition_reference(mech);
    weight_ref = &*regular_ref;
  }
  const TrainingConfig tc_base = training_defaults(cfg, mech, trained_cols, weight_ref);

  // All cells are scored against one reference solve on a fixed grid spanning
  // the training window.
  const std::size_t n_eval = cfg.output_points ? cfg.output_points : 200;
  std::vector<double> eval_times;
  if (tc_base.sampling == Sampling::log_uniform) {
    eval_times = log_uniform_grid(tc_base.t_min, tc_base.t_max, n_eval);
  } else {
    eval_times.resize(n_eval);
    for (std::size_t i = 0; i < n_eval; ++i)
      eval_times[i] = tc_base.t_min + (tc_base.t_max - tc_base.t_min) * static_cast<double>(i) /
                                          static_cast<double>(n_eval - 1);
  }
  SolverConfig ref_sc;
  ref_sc.rtol = 1e-8;
  ref_sc.atol = {1e-12};
  ref_sc.method = Method::bdf;
  const auto t_ref = std::chrono::steady_clock::now();
  const SolutionTrajectory eval_ref =
      solve_full(mech, ref_sc, {mech.t_span.first, tc_base.t_max}, eval_times);
  out.manifest.timings.emplace_back("reference", seconds_since(t_ref));

  for (std::size_t s = 0; s < cfg.sweep_seeds; ++s)
    out.manifest.cell_seeds.push_back(cfg.seed + s);

  std::string runs_csv = "architecture,seed,status,final_loss";
  for (const auto& name : trained_names) runs_csv += ",rmse_" + name;
  runs_csv += "\n";
  std::string sweep_csv = "architecture,seeds,failed";
  for (const auto& name : trained_names) sweep_csv += ",median_rmse_" + name;
  sweep_csv += "\n";

  std::size_t total_failures = 0;
  const auto t_cells = std::chrono::steady_clock::now();
  for (const WidthsSpec& arch : cfg.sweep_grid) {
    std::vector<std::vector<double>> per_species_rmse(trained_names.size());
    std::size_t failed = 0;
    for (std::size_t s = 0; s < cfg.sweep_seeds; ++s) {
      const std::uint64_t cell_seed = cfg.seed + s;
      try {
        TrainingConfig tc = tc_base;
        tc.rng_seed = cell_seed;
        const std::vector<std::size_t> widths = resolve_widths(arch, trained_names.size());
        const MlpModel model = make_mlp(widths, cell_seed, tc.output_transform);
        const TrainResult result =
            stiff ? train(model, setup->sys, tc) : train(model, mech, tc);
        const std::vector<double> y0 =
            stiff ? reduced_initial_state(setup->sys) : mech.initial_concentrations;
        const std::vector<double> rmse =
            evaluate_rmse(result.model, y0, eval_ref, trained_cols);
        const double final_loss = result.history.empty()
                                      ? std::numeric_limits<double>::quiet_NaN()
                                      : result.history.back().total_loss;
        runs_csv += arch.label() + "," + std::to_string(cell_seed) + ",ok," + g17(final_loss);
        for (std::size_t i = 0; i < rmse.size(); ++i) {
          runs_csv += "," + g17(rmse[i]);
          per_species_rmse[i].push_back(rmse[i]);
        }
        runs_csv += "\n";
      } catch (const std::exception& e) {
        ++failed;
        ++total_failures;
        std::fprintf(stderr, "sweep cell %s seed %llu failed: %s\n", arch.label().c_str(),
                     static_cast<unsigned long long>(cell_seed), e.what());
        runs_csv += arch.label() + "," + std::to_string(cell_seed) + ",failed,nan";
        for (std::size_t i = 0; i < trained_names.size(); ++i) runs_csv += ",nan";
        runs_csv += "\n";
      }
    }
    sweep_csv += arch.label() + "," + std::to_string(cfg.sweep_seeds) + "," +
                 std::to_string(failed);
    std::string summary = arch.label() + ":";
    for (std::size_t i = 0; i < trained_names.size(); ++i) {
      const double med = median(per_species_rmse[i]);
      sweep_csv += "," + g17(med);
      summary += " rmse_" + trained_names[i] + "=" + g17(med);
    }
    sweep_csv += "\n";
    std::printf("%s\n", summary.c_str());
  }
  out.manifest.timings.emplace_back("cells", seconds_since(t_cells));

  out.write("runs.csv", runs_csv);
  out.write("sweep.csv", sweep_csv);
  out.finish();
  std::printf("wrote %s (%zu architectures, %zu seeds each, %zu failed runs)\n",
              (out.dir / "sweep.csv").string().c_str(), cfg.sweep_grid.size(), cfg.sweep_seeds,
              total_failures);
  return total_failures ? 4 : 0;
}

// ---------------------------------------------------------------------------
// stiffness

int cmd_stiffness(const ExperimentConfig& cfg) {
  const Mechanism mech = load_mechanism(cfg);
  OutputWriter out(cfg, "stiffness");
  // An explicit stability-limited method cannot cross the Robertson span at
  // 1e5 s in reasonable time, so the default window is capped; set
  // [solver] t_end to override.
  constexpr double kDefaultWindow = 100.0;
  std::pair<double, double> span = resolve_span(cfg, mech);
  if (!cfg.t_end) span.second = std::min(span.second, span.first + kDefaultWindow);

  SolverConfig sc = solver_config(cfg);
  sc.method = Method::bdf;
  std::vector<double> grid;
  if (cfg.output_points) grid = build_output_grid(cfg, span);
  const auto t_ref = std::chrono::steady_clock::now();
  const SolutionTrajectory traj = solve_full(mech, sc, span, grid);
  out.manifest.timings.emplace_back("reference", seconds_since(t_ref));

  const JacFn jac = make_jacobian(mech);
  const std::size_t n = mech.species_count();
  std::string spec_csv = "t";
  for (std::size_t k = 0; k < n; ++k) {
    const std::string idx = std::to_string(k + 1);
    spec_csv += ",lambda" + idx + "_re,lambda" + idx + "_im";
  }
  spec_csv += ",stiffness_ratio\n";

  std::size_t eigen_failures = 0;
  double ratio_min = std::numeric_limits<double>::infinity(), ratio_max = 0.0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t r = 0; r < traj.times.size(); ++r) {
    StateVector state{traj.times[r], {}};
    state.y.resize(n);
    for (std::size_t c = 0; c < n; ++c) state.y[c] = traj.states(r, c);
    spec_csv += g17(traj.times[r]);
    try {
      std::vector<std::complex<double>> spectrum = stiffness_spectrum(jac, state);
      std::sort(spectrum.begin(), spectrum.end(), [](const auto& a, const auto& b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
      });
      for (const auto& ev : spectrum) spec_csv += "," + g17(ev.real()) + "," + g17(ev.imag());
      double ratio = nan;
      try {
        ratio = stiffness_ratio(spectrum);
        ratio_min = std::min(ratio_min, ratio);
        ratio_max = std::max(ratio_max, ratio);
      } catch (const numeric_error&) {
      }
      spec_csv += "," + g17(ratio) + "\n";
    } catch (const numeric_error&) {
      ++eigen_failures;
      for (std::size_t k = 0; k < 2 * n + 1; ++k) spec_csv += "," + g17(nan);
      spec_csv += "\n";
    }
  }
  out.write("stiffness.csv", spec_csv);
  if (eigen_failures)
    std::fprintf(stderr, "note: eigenvalue solve failed at %zu of %zu times (rows marked nan)\n",
                 eigen_failures, traj.times.size());

  // The same window solved with both steppers, on a step budget: the
  // explicit method is expected to need vastly more steps or hit the cap.
  std::string steps_csv =
      "method,status,accepted_steps,rejected_steps,rhs_evaluations,jacobian_evaluations,"
      "newton_iterations\n";
  long accepted[2] = {-1, -1};
  const char* method_names[2] = {"bdf", "dopri5"};
  for (int which = 0; which < 2; ++which) {
    SolverConfig cmp = solver_config(cfg);
    cmp.method = which == 0 ? Method::bdf : Method::dopri5;
    cmp.max_steps = 2'000'000;
    const auto t_cmp = std::chrono::steady_clock::now();
    try {
      const SolutionTrajectory t = solve_full(mech, cmp, span);
      const StepStats& st = t.stats;
      accepted[which] = st.accepted_steps;
      steps_csv += std::string(method_names[which]) + ",ok," +
                   std::to_string(st.accepted_steps) + "," + std::to_string(st.rejected_steps) +
                   "," + std::to_string(st.rhs_evaluations) + "," +
                   std::to_string(st.jacobian_evaluations) + "," +
                   std::to_string(st.newton_iterations) + "\n";
    } catch (const numeric_error& e) {
      steps_csv += std::string(method_names[which]) + ",failed,nan,nan,nan,nan,nan\n";
      std::fprintf(stderr, "note: %s stopped early over [%g, %g]: %s\n", method_names[which],
                   span.first, span.second, e.what());
    }
    out.manifest.timings.emplace_back(method_names[which], seconds_since(t_cmp));
  }
  out.write("steps.csv", steps_csv);
  out.finish();

  if (ratio_max > 0.0)
    std::printf("stiffness ratio spans [%.6g, %.6g] over [%g, %g]\n", ratio_min, ratio_max,
                span.first, span.second);
  if (accepted[0] > 0 && accepted[1] > 0)
    std::printf("accepted steps: bdf %ld, dopri5 %ld (ratio %.1f)\n", accepted[0], accepted[1],
                static_cast<double>(accepted[1]) / static_cast<double>(accepted[0]));
  std::printf("wrote %s and steps.csv (%zu rows)\n",
              (out.dir / "stiffness.csv").string().c_str(), traj.times.size());
  return 0;
}

// ---------------------------------------------------------------------------
// plot

int cmd_plot(const ExperimentConfig& cfg, const Invocation& inv) {
  if (inv.positionals.empty()) throw config_error("plot needs at least one input CSV path");
  std::vector<PlotSeries> series;
  std::string abscissa;
  for (const auto& path : inv.positionals) {
    NumericTable table;
    try {
      table = parse_numeric_csv(read_text_file(path));
    } catch (const io_error& e) {
      throw config_error(std::string(e.what()));
    }
    if (table.columns.size() < 2)
      throw config_error("'" + path + "' has no data columns beyond the abscissa");
    if (abscissa.empty())
      abscissa = table.columns[0];
    else if (table.columns[0] != abscissa)
      throw config_error("input CSVs disagree on the abscissa column: '" + abscissa + "' vs '" +
                         table.columns[0] + "'");
    const std::vector<double> x = table.column_values(0);
    const std::string stem = std::filesystem::path(path).stem().string();
    for (std::size_t c = 1; c < table.columns.size(); ++c) {
      PlotSeries s;
      s.label = inv.positionals.size() == 1 ? table.columns[c]
                                            : table.columns[c] + " (" + stem + ")";
      s.x = x;
      s.y = table.column_values(c);
      series.push_back(std::move(s));
    }
  }

  PlotOptions popt;
  popt.log_x = inv.log_x;
  popt.log_y = inv.log_y;
  if (const auto it = inv.local.find("title"); it != inv.local.end()) popt.title = it->second;
  popt.x_label = inv.local.count("x-label") ? inv.local.at("x-label") : abscissa;
  if (const auto it = inv.local.find("y-label"); it != inv.local.end()) popt.y_label = it->second;

  const PlotResult plot = render_line_plot(series, popt);
  warn_dropped(plot, "the plot");

  OutputWriter out(cfg, "plot");
  const std::string name =
      inv.local.count("output") ? inv.local.at("output") : std::string("plot.svg");
  out.write(name, plot.svg);
  out.finish();
  std::printf("wrote %s (%zu series)\n", (out.dir / name).string().c_str(), series.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const Invocation inv = parse_args(argc, argv);
    const ExperimentConfig cfg = load_config(inv);
    if (inv.command == "simulate") return cmd_simulate(cfg);
    if (inv.command == "reduce") return cmd_reduce(cfg);
    if (inv.command == "train") return cmd_train(cfg);
    if (inv.command == "evaluate") return cmd_evaluate(cfg, inv);
    if (inv.command == "sweep") return cmd_sweep(cfg);
    if (inv.command == "stiffness") return cmd_stiffness(cfg);
    if (inv.command == "plot") return cmd_plot(cfg, inv);
    throw config_error("unknown command '" + inv.command + "'");
  } catch (const parse_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const config_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const io_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const dimension_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected failure: %s\n", e.what());
    return 3;
  }
}
