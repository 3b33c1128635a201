#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kinnet/autodiff.hpp"
#include "kinnet/errors.hpp"
#include "kinnet/rng.hpp"
#include "kinnet/text.hpp"

// Fully connected network over a single time input, with the output transform
// that bakes the initial condition into the architecture: y = y0 + t * N(log t).

namespace kinnet {

enum class OutputTransform { hard_ic, none };

// Parameters flattened layer by layer, weights row-major over (out, in)
// followed by that layer's biases.
struct MlpModel {
  std::vector<std::size_t> widths;
  std::vector<double> params;
  OutputTransform transform = OutputTransform::hard_ic;
  std::uint64_t seed = 0;

  std::size_t output_count() const { return widths.empty() ? 0 : widths.back(); }
};

inline std::size_t mlp_parameter_count(std::span<const std::size_t> widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l] * widths[l + 1] + widths[l + 1];
  return n;
}

inline void validate_widths(std::span<const std::size_t> widths) {
  if (widths.size() < 3)
    throw config_error("network needs an input, at least one hidden, and an output layer");
  if (widths.front() != 1) throw config_error("network input width must be 1 (time is the only input)");
  for (const std::size_t w : widths)
    if (w == 0) throw config_error("network layer widths must be positive");
}

// Weights uniform within the Xavier bound sqrt(6/(fan_in+fan_out)), biases
// zero; deterministic in the seed.
inline MlpModel make_mlp(std::vector<std::size_t> widths, std::uint64_t seed,
                         OutputTransform transform = OutputTransform::hard_ic) {
  validate_widths(widths);
  MlpModel m;
  m.widths = std::move(widths);
  m.transform = transform;
  m.seed = seed;
  m.params.assign(mlp_parameter_count(m.widths), 0.0);
  Rng rng(seed, 0);
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
    const std::size_t fan = m.widths[l] * m.widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(m.widths[l] + m.widths[l + 1]));
    for (std::size_t k = 0; k < fan; ++k) m.params[off + k] = rng.uniform(-bound, bound);
    off += fan + m.widths[l + 1];
  }
  return m;
}

// Raw network value N(s) for a prepared input (log t under the hard-IC
// transform, t itself otherwise). Runs on doubles and dual scalars; the taped
// route below records layer nodes instead of scalar arithmetic.
template <class T>
std::vector<T> mlp_raw(const MlpModel& m, T input) {
  std::vector<T> x{std::move(input)};
  std::vector<T> z;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
    const std::size_t nin = m.widths[l], nout = m.widths[l + 1];
    const std::size_t wo = off, bo = off + nin * nout;
    off = bo + nout;
    z.assign(nout, T(0.0));
    for (std::size_t j = 0; j < nout; ++j)
      z[j] = detail::affine_row(&m.params[wo + j * nin], x.data(), nin, T(m.params[bo + j]));
    if (l + 2 < m.widths.size())
      for (auto& v : z) v = gelu(v);
    x = std::move(z);
  }
  return x;
}

// The tape must have been built over this model's parameter vector.
inline std::vector<TapeVar> mlp_taped(const MlpModel& m, Tape& tape, TapeVar input) {
  if (tape.parameter_count() != m.params.size())
    throw dimension_error("tape parameters do not match the model");
  std::vector<TapeVar> x{input};
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
    const std::size_t nin = m.widths[l], nout = m.widths[l + 1];
    const std::size_t wo = off, bo = off + nin * nout;
    off = bo + nout;
    x = tape.affine(x, wo, bo, nout);
    if (l + 2 < m.widths.size())
      for (auto& v : x) v = gelu(v);
  }
  return x;
}

namespace detail {

inline void check_transform_state(const MlpModel& m, std::span<const double> y0) {
  if (m.transform == OutputTransform::hard_ic && y0.size() != m.output_count())
    throw dimension_error("initial-condition vector does not match the network output width");
}

}  // namespace detail

// Prediction with the output transform applied. Under hard-IC, t = 0 returns
// y0 exactly as the transform's limit, with no network evaluation.
inline std::vector<double> predict(const MlpModel& m, std::span<const double> y0, double t) {
  detail::check_transform_state(m, y0);
  if (m.transform == OutputTransform::none) return mlp_raw<double>(m, t);
  if (t == 0.0) return {y0.begin(), y0.end()};
  if (t < 0.0) throw derivative_domain_error("hard-IC transform needs t >= 0");
  std::vector<double> out = mlp_raw<double>(m, std::log(t));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = y0[i] + t * out[i];
  return out;
}

// Value and d/dt in one pass; requires t > 0 under hard-IC because the time
// derivative at zero is not defined through the log input.
inline std::vector<DualScalar> predict_dual(const MlpModel& m, std::span<const double> y0,
                                            double t) {
  detail::check_transform_state(m, y0);
  if (m.transform == OutputTransform::none) return mlp_raw<DualScalar>(m, {t, 1.0});
  if (t <= 0.0) throw derivative_domain_error("hard-IC derivative needs t > 0");
  std::vector<DualScalar> out = mlp_raw<DualScalar>(m, {std::log(t), 1.0 / t});
  const DualScalar tv{t, 1.0};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tv * out[i] + y0[i];
  return out;
}

inline std::vector<TapeVar> predict_taped(const MlpModel& m, Tape& tape,
                                          std::span<const double> y0, double t) {
  detail::check_transform_state(m, y0);
  if (m.transform == OutputTransform::none) return mlp_taped(m, tape, tape.input(t, 1.0));
  if (t <= 0.0) throw derivative_domain_error("hard-IC derivative needs t > 0");
  TapeVar s = tape.input(std::log(t), 1.0 / t);
  TapeVar tv = tape.input(t, 1.0);
  std::vector<TapeVar> out = mlp_taped(m, tape, s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tv * out[i] + y0[i];
  return out;
}

// Checkpoint text: header lines (widths, activation, seed, transform), then
// one parameter per line at 17 significant digits in flattening order.
inline std::string serialize_checkpoint(const MlpModel& m) {
  std::string out = "widths=";
  for (std::size_t i = 0; i < m.widths.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(m.widths[i]);
  }
  out += "\nactivation=gelu\nseed=" + std::to_string(m.seed);
  out += "\ntransform=";
  out += (m.transform == OutputTransform::hard_ic ? "hard-ic" : "none");
  out += '\n';
  for (const double p : m.params) out += g17(p) + "\n";
  return out;
}

inline MlpModel parse_checkpoint(std::string_view text) {
  MlpModel m;
  std::vector<std::string_view> lines;
  for (const auto& piece : split_char(text, '\n')) lines.push_back(piece);
  if (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.size() < 4) throw parse_error("checkpoint needs four header lines");

  auto header = [&](std::size_t idx, std::string_view key) {
    const std::string_view line = trim(lines[idx]);
    if (line.substr(0, key.size() + 1) != std::string(key) + "=")
      throw parse_error("expected '" + std::string(key) + "=...'", static_cast<int>(idx + 1));
    return line.substr(key.size() + 1);
  };

  for (const auto& tok : split_char(header(0, "widths"), ',')) {
    const long w = parse_integer(trim(tok), 1);
    if (w <= 0) throw parse_error("layer widths must be positive", 1);
    m.widths.push_back(static_cast<std::size_t>(w));
  }
  try {
    validate_widths(m.widths);
  } catch (const config_error& e) {
    throw parse_error(e.what(), 1);
  }
  if (header(1, "activation") != "gelu")
    throw parse_error("unknown activation '" + std::string(header(1, "activation")) + "'", 2);
  {
    const long s = parse_integer(header(2, "seed"), 3);
    if (s < 0) throw parse_error("seed must be non-negative", 3);
    m.seed = static_cast<std::uint64_t>(s);
  }
  const std::string_view tr = header(3, "transform");
  if (tr == "hard-ic")
    m.transform = OutputTransform::hard_ic;
  else if (tr == "none")
    m.transform = OutputTransform::none;
  else
    throw parse_error("unknown transform '" + std::string(tr) + "'", 4);

  const std::size_t count = mlp_parameter_count(m.widths);
  if (lines.size() != 4 + count)
    throw parse_error("expected " + std::to_string(count) + " parameter lines, found " +
                      std::to_string(lines.size() - 4));
  m.params.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    m.params.push_back(parse_real(trim(lines[4 + i]), static_cast<int>(5 + i)));
  return m;
}

}  // namespace kinnet
