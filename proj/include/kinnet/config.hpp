#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kinnet/errors.hpp"
#include "kinnet/pinn.hpp"
#include "kinnet/text.hpp"

// INI-style experiment configuration: `[section]` headers over `key = value`
// lines, '#' or ';' comment lines, later duplicates replacing earlier ones.
// Key order is preserved so parse -> serialize -> parse is a fixed point.

namespace kinnet {

struct IniDoc {
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  std::vector<Section> sections;

  const std::string* find(std::string_view section, std::string_view key) const {
    for (const auto& s : sections) {
      if (s.name != section) continue;
      for (const auto& [k, v] : s.entries)
        if (k == key) return &v;
    }
    return nullptr;
  }

  void set(std::string_view section, std::string_view key, std::string value) {
    for (auto& s : sections) {
      if (s.name != section) continue;
      for (auto& [k, v] : s.entries) {
        if (k == key) {
          v = std::move(value);
          return;
        }
      }
      s.entries.emplace_back(std::string(key), std::move(value));
      return;
    }
    sections.push_back({std::string(section), {{std::string(key), std::move(value)}}});
  }
};

inline IniDoc parse_ini(std::string_view text) {
  IniDoc doc;
  int line_no = 0;
  IniDoc::Section* current = nullptr;
  for (const auto raw : split_char(text, '\n')) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw parse_error("unterminated section header", line_no);
      const std::string_view name = trim(line.substr(1, line.size() - 2));
      if (name.empty()) throw parse_error("empty section name", line_no);
      current = nullptr;
      for (auto& s : doc.sections)
        if (s.name == name) current = &s;
      if (!current) {
        doc.sections.push_back({std::string(name), {}});
        current = &doc.sections.back();
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw parse_error("expected 'key = value'", line_no);
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) throw parse_error("empty key", line_no);
    if (value.empty()) throw parse_error("empty value for '" + std::string(key) + "'", line_no);
    if (!current) throw parse_error("'" + std::string(key) + "' appears before any [section]", line_no);
    bool replaced = false;
    for (auto& [k, v] : current->entries) {
      if (k == key) {
        v = std::string(value);
        replaced = true;
        break;
      }
    }
    if (!replaced) current->entries.emplace_back(std::string(key), std::string(value));
  }
  return doc;
}

inline std::string serialize_ini(const IniDoc& doc) {
  std::string out;
  for (std::size_t i = 0; i < doc.sections.size(); ++i) {
    if (i) out += '\n';
    out += '[' + doc.sections[i].name + "]\n";
    for (const auto& [k, v] : doc.sections[i].entries) out += k + " = " + v + "\n";
  }
  return out;
}

namespace detail {

inline std::string ini_context(std::string_view section, std::string_view key) {
  return "[" + std::string(section) + "] " + std::string(key);
}

}  // namespace detail

inline std::string ini_get(const IniDoc& doc, std::string_view section, std::string_view key,
                           std::string fallback) {
  const std::string* v = doc.find(section, key);
  return v ? *v : std::move(fallback);
}

inline double ini_number(const IniDoc& doc, std::string_view section, std::string_view key,
                         double fallback) {
  const std::string* v = doc.find(section, key);
  if (!v) return fallback;
  try {
    return parse_real(*v);
  } catch (const parse_error&) {
    throw config_error(detail::ini_context(section, key) + ": expected a number, got '" + *v + "'");
  }
}

inline std::size_t ini_count(const IniDoc& doc, std::string_view section, std::string_view key,
                             std::size_t fallback) {
  const std::string* v = doc.find(section, key);
  if (!v) return fallback;
  long n = 0;
  try {
    n = parse_integer(*v);
  } catch (const parse_error&) {
    throw config_error(detail::ini_context(section, key) + ": expected an integer, got '" + *v +
                       "'");
  }
  if (n < 0)
    throw config_error(detail::ini_context(section, key) + ": expected a non-negative integer");
  return static_cast<std::size_t>(n);
}

inline bool ini_flag(const IniDoc& doc, std::string_view section, std::string_view key,
                     bool fallback) {
  const std::string* v = doc.find(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw config_error(detail::ini_context(section, key) + ": expected true or false, got '" + *v +
                     "'");
}

inline std::vector<double> ini_number_list(const IniDoc& doc, std::string_view section,
                                           std::string_view key, std::vector<double> fallback) {
  const std::string* v = doc.find(section, key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto tok : split_char(*v, ',')) {
    try {
      out.push_back(parse_real(trim(tok)));
    } catch (const parse_error&) {
      throw config_error(detail::ini_context(section, key) + ": expected numbers, got '" + *v +
                         "'");
    }
  }
  return out;
}

// Network shape, either `WxD` (hidden width x hidden depth, input and output
// layers added when resolved against a mechanism) or an explicit
// comma-separated layer list starting at the 1-wide time input.
struct WidthsSpec {
  std::size_t hidden_width = 0;
  std::size_t hidden_depth = 0;
  std::vector<std::size_t> layers;

  bool is_explicit() const { return !layers.empty(); }

  std::string label() const {
    if (!is_explicit())
      return std::to_string(hidden_width) + "x" + std::to_string(hidden_depth);
    std::string out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(layers[i]);
    }
    return out;
  }
};

inline WidthsSpec parse_widths_spec(std::string_view text) {
  const std::string_view s = trim(text);
  if (s.empty()) throw config_error("empty network widths");
  WidthsSpec spec;
  const auto x = s.find('x');
  if (x != std::string_view::npos && s.find(',') == std::string_view::npos) {
    long w = 0, d = 0;
    try {
      w = parse_integer(trim(s.substr(0, x)));
      d = parse_integer(trim(s.substr(x + 1)));
    } catch (const parse_error&) {
      throw config_error("malformed widths '" + std::string(s) + "': expected WxD or a layer list");
    }
    if (w <= 0 || d <= 0) throw config_error("network width and depth must be positive");
    spec.hidden_width = static_cast<std::size_t>(w);
    spec.hidden_depth = static_cast<std::size_t>(d);
    return spec;
  }
  for (const auto tok : split_char(s, ',')) {
    long w = 0;
    try {
      w = parse_integer(trim(tok));
    } catch (const parse_error&) {
      throw config_error("malformed widths '" + std::string(s) + "': expected WxD or a layer list");
    }
    if (w <= 0) throw config_error("network layer widths must be positive");
    spec.layers.push_back(static_cast<std::size_t>(w));
  }
  return spec;
}

// Full layer list for a given output count. Explicit lists must already
// agree at both ends.
inline std::vector<std::size_t> resolve_widths(const WidthsSpec& spec, std::size_t n_out) {
  if (spec.is_explicit()) {
    validate_widths(spec.layers);
    if (spec.layers.back() != n_out)
      throw config_error("network output width " + std::to_string(spec.layers.back()) +
                         " does not match the " + std::to_string(n_out) + " trained species");
    return spec.layers;
  }
  std::vector<std::size_t> widths{1};
  widths.insert(widths.end(), spec.hidden_depth, spec.hidden_width);
  widths.push_back(n_out);
  return widths;
}

enum class TrainMode { regular, stiff };

// Training keys present in the file; anything absent falls back to the
// mechanism-appropriate defaults the command computes.
struct TrainingOverrides {
  std::optional<std::size_t> n_collocation, batch_size, max_updates, plateau_window, record_every;
  std::optional<double> t_min, t_max, learning_rate;
  std::optional<Sampling> sampling;
  std::optional<OutputTransform> output_transform;
  std::optional<std::vector<double>> species_weights, y_ref_scale;

  TrainingConfig apply(TrainingConfig base) const {
    if (n_collocation) base.n_collocation = *n_collocation;
    if (batch_size) base.batch_size = *batch_size;
    if (max_updates) base.max_updates = *max_updates;
    if (plateau_window) base.plateau_window = *plateau_window;
    if (record_every) base.record_every = *record_every;
    if (t_min) base.t_min = *t_min;
    if (t_max) base.t_max = *t_max;
    if (learning_rate) base.learning_rate = *learning_rate;
    if (sampling) base.sampling = *sampling;
    if (output_transform) base.output_transform = *output_transform;
    if (species_weights) base.species_weights = *species_weights;
    if (y_ref_scale) base.y_ref_scale = *y_ref_scale;
    return base;
  }
};

struct ExperimentConfig {
  IniDoc doc;  // snapshot after overrides, serialized into manifests

  std::string mechanism = "builtin:rober";

  std::string method = "bdf";
  double rtol = 1e-8;
  std::vector<double> atol{1e-12};
  std::optional<double> t_start, t_end;  // absent: the mechanism's own span
  bool reduced = false;                  // integrate the QSS-reduced system
  std::size_t output_points = 0;  // 0: report the solver's own accepted steps
  bool output_log_spacing = true;

  double qss_threshold = 1.5e-4;
  std::string closure = "newton";

  WidthsSpec widths;

  TrainMode train_mode = TrainMode::stiff;
  TrainingOverrides training;
  std::uint64_t seed = 0;
  std::size_t sweep_seeds = 3;
  std::vector<WidthsSpec> sweep_grid;

  std::string out_dir = "out";
  bool emit_svg = false;
};

namespace detail {

inline void check_known_keys(const IniDoc& doc) {
  struct Known {
    std::string_view section;
    std::vector<std::string_view> keys;
  };
  static const std::vector<Known> known{
      {"mechanism", {"source"}},
      {"solver",
       {"method", "rtol", "atol", "t_start", "t_end", "reduced", "output_points",
        "output_spacing"}},
      {"qssa", {"threshold", "closure"}},
      {"network", {"widths"}},
      {"training",
       {"mode", "n_collocation", "t_min", "t_max", "sampling", "batch_size", "learning_rate",
        "max_updates", "species_weights", "rng_seed", "output_transform", "y_ref_scale",
        "plateau_window", "record_every", "sweep_seeds", "sweep_grid"}},
      {"output", {"directory", "emit_svg"}},
  };
  for (const auto& s : doc.sections) {
    const Known* match = nullptr;
    for (const auto& k : known)
      if (k.section == s.name) match = &k;
    if (!match) throw config_error("unknown section [" + s.name + "]");
    for (const auto& [key, value] : s.entries) {
      bool ok = false;
      for (const auto& k : match->keys)
        if (k == key) ok = true;
      if (!ok) throw config_error("unknown key '" + key + "' in [" + s.name + "]");
    }
  }
}

template <class T>
std::optional<T> opt_count(const IniDoc& doc, std::string_view sec, std::string_view key) {
  if (!doc.find(sec, key)) return std::nullopt;
  return static_cast<T>(ini_count(doc, sec, key, 0));
}

inline std::optional<double> opt_number(const IniDoc& doc, std::string_view sec,
                                        std::string_view key) {
  if (!doc.find(sec, key)) return std::nullopt;
  return ini_number(doc, sec, key, 0.0);
}

}  // namespace detail

inline ExperimentConfig load_experiment_config(IniDoc doc) {
  detail::check_known_keys(doc);
  ExperimentConfig cfg;

  cfg.mechanism = ini_get(doc, "mechanism", "source", cfg.mechanism);

  cfg.method = ini_get(doc, "solver", "method", cfg.method);
  if (cfg.method != "bdf" && cfg.method != "dopri5")
    throw config_error("[solver] method must be bdf or dopri5, got '" + cfg.method + "'");
  cfg.rtol = ini_number(doc, "solver", "rtol", cfg.rtol);
  if (!(cfg.rtol > 0.0)) throw config_error("[solver] rtol must be positive");
  cfg.atol = ini_number_list(doc, "solver", "atol", cfg.atol);
  if (cfg.atol.empty()) throw config_error("[solver] atol must not be empty");
  for (const double a : cfg.atol)
    if (!(a > 0.0)) throw config_error("[solver] atol entries must be positive");
  cfg.t_start = detail::opt_number(doc, "solver", "t_start");
  cfg.t_end = detail::opt_number(doc, "solver", "t_end");
  if (cfg.t_start && cfg.t_end && !(*cfg.t_start < *cfg.t_end))
    throw config_error("[solver] t_start must be below t_end");
  cfg.reduced = ini_flag(doc, "solver", "reduced", cfg.reduced);
  cfg.output_points = ini_count(doc, "solver", "output_points", cfg.output_points);
  const std::string spacing =
      ini_get(doc, "solver", "output_spacing", cfg.output_log_spacing ? "log" : "linear");
  if (spacing != "log" && spacing != "linear")
    throw config_error("[solver] output_spacing must be log or linear, got '" + spacing + "'");
  cfg.output_log_spacing = spacing == "log";

  cfg.qss_threshold = ini_number(doc, "qssa", "threshold", cfg.qss_threshold);
  if (cfg.qss_threshold < 0.0) throw config_error("[qssa] threshold must be non-negative");
  cfg.closure = ini_get(doc, "qssa", "closure", cfg.closure);
  if (cfg.closure != "newton" && cfg.closure != "closed-form")
    throw config_error("[qssa] closure must be newton or closed-form, got '" + cfg.closure + "'");

  cfg.widths = parse_widths_spec(ini_get(doc, "network", "widths", "128x3"));

  const std::string mode = ini_get(doc, "training", "mode", "stiff");
  if (mode == "regular")
    cfg.train_mode = TrainMode::regular;
  else if (mode == "stiff")
    cfg.train_mode = TrainMode::stiff;
  else
    throw config_error("[training] mode must be regular or stiff, got '" + mode + "'");

  cfg.training.n_collocation = detail::opt_count<std::size_t>(doc, "training", "n_collocation");
  cfg.training.batch_size = detail::opt_count<std::size_t>(doc, "training", "batch_size");
  cfg.training.max_updates = detail::opt_count<std::size_t>(doc, "training", "max_updates");
  cfg.training.plateau_window = detail::opt_count<std::size_t>(doc, "training", "plateau_window");
  cfg.training.record_every = detail::opt_count<std::size_t>(doc, "training", "record_every");
  cfg.training.t_min = detail::opt_number(doc, "training", "t_min");
  cfg.training.t_max = detail::opt_number(doc, "training", "t_max");
  cfg.training.learning_rate = detail::opt_number(doc, "training", "learning_rate");
  if (const std::string* s = doc.find("training", "sampling")) {
    if (*s == "log-uniform")
      cfg.training.sampling = Sampling::log_uniform;
    else if (*s == "uniform")
      cfg.training.sampling = Sampling::uniform;
    else
      throw config_error("[training] sampling must be log-uniform or uniform, got '" + *s + "'");
  }
  if (const std::string* s = doc.find("training", "output_transform")) {
    if (*s == "hard-ic")
      cfg.training.output_transform = OutputTransform::hard_ic;
    else if (*s == "none")
      cfg.training.output_transform = OutputTransform::none;
    else
      throw config_error("[training] output_transform must be hard-ic or none, got '" + *s + "'");
  }
  if (doc.find("training", "species_weights"))
    cfg.training.species_weights = ini_number_list(doc, "training", "species_weights", {});
  if (doc.find("training", "y_ref_scale"))
    cfg.training.y_ref_scale = ini_number_list(doc, "training", "y_ref_scale", {});
  cfg.seed = ini_count(doc, "training", "rng_seed", 0);
  cfg.sweep_seeds = ini_count(doc, "training", "sweep_seeds", cfg.sweep_seeds);
  if (cfg.sweep_seeds == 0) throw config_error("[training] sweep_seeds must be at least 1");
  const std::string grid =
      ini_get(doc, "training", "sweep_grid", "64x4,64x5,128x2,128x3,256x1");
  for (const auto tok : split_char(grid, ',')) {
    // Grid cells are WxD tokens; a comma list of cells, so parse each alone.
    cfg.sweep_grid.push_back(parse_widths_spec(tok));
    if (cfg.sweep_grid.back().is_explicit())
      throw config_error("[training] sweep_grid cells must be WxD tokens, got '" +
                         std::string(trim(tok)) + "'");
  }

  cfg.out_dir = ini_get(doc, "output", "directory", cfg.out_dir);
  cfg.emit_svg = ini_flag(doc, "output", "emit_svg", cfg.emit_svg);

  cfg.doc = std::move(doc);
  return cfg;
}

}  // namespace kinnet
