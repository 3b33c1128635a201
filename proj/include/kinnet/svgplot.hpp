#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kinnet/errors.hpp"

// Self-contained SVG line plots for trajectory and loss curves. Output is a
// pure function of the inputs, so reruns produce byte-identical files.

namespace kinnet {

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

struct PlotOptions {
  std::string title, x_label, y_label;
  bool log_x = false;
  bool log_y = false;
  int width = 880;
  int height = 560;
};

struct PlotResult {
  std::string svg;
  std::size_t dropped_points = 0;  // non-finite, or non-positive on a log axis
};

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct AxisTicks {
  std::vector<double> at;          // in plot coordinates (log10 when the axis is log)
  std::vector<std::string> label;
};

inline AxisTicks linear_ticks(double lo, double hi, bool decade_labels) {
  const double span = hi - lo;
  const double raw = span / 6.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  const double step = (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0) * mag;
  AxisTicks ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) {
    const double v = std::abs(t) < step * 1e-9 ? 0.0 : t;
    ticks.at.push_back(v);
    ticks.label.push_back(fmt("%g", decade_labels ? std::pow(10.0, v) : v));
  }
  return ticks;
}

inline AxisTicks axis_ticks(double lo, double hi, bool log_axis) {
  if (log_axis) {
    AxisTicks ticks;
    for (double e = std::ceil(lo); e <= std::floor(hi) + 1e-9; e += 1.0) {
      ticks.at.push_back(e);
      char buf[32];
      std::snprintf(buf, sizeof buf, "1e%d", static_cast<int>(std::lround(e)));
      ticks.label.emplace_back(buf);
    }
    if (ticks.at.size() >= 2) return ticks;
    return linear_ticks(lo, hi, true);  // the range spans less than a decade
  }
  return linear_ticks(lo, hi, false);
}

}  // namespace detail

inline PlotResult render_line_plot(std::span<const PlotSeries> series, const PlotOptions& opt) {
  static const char* const palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                        "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  constexpr std::size_t kPalette = sizeof palette / sizeof palette[0];

  PlotResult result;
  std::vector<std::vector<std::pair<double, double>>> pts(series.size());
  double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
  bool any = false;
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (series[s].x.size() != series[s].y.size())
      throw dimension_error("series '" + series[s].label + "' has " +
                            std::to_string(series[s].x.size()) + " x values but " +
                            std::to_string(series[s].y.size()) + " y values");
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      double u = series[s].x[i], v = series[s].y[i];
      const bool usable = std::isfinite(u) && std::isfinite(v) && (!opt.log_x || u > 0.0) &&
                          (!opt.log_y || v > 0.0);
      if (!usable) {
        ++result.dropped_points;
        continue;
      }
      if (opt.log_x) u = std::log10(u);
      if (opt.log_y) v = std::log10(v);
      pts[s].emplace_back(u, v);
      if (!any) {
        xlo = xhi = u;
        ylo = yhi = v;
        any = true;
      } else {
        xlo = std::min(xlo, u);
        xhi = std::max(xhi, u);
        ylo = std::min(ylo, v);
        yhi = std::max(yhi, v);
      }
    }
  }
  if (!any) throw config_error("nothing to plot: every point was dropped");

  auto widen = [](double& lo, double& hi) {
    if (hi > lo) {
      const double pad = 0.05 * (hi - lo);
      lo -= pad;
      hi += pad;
    } else {
      const double pad = lo == 0.0 ? 1.0 : 0.5 * std::abs(lo);
      lo -= pad;
      hi += pad;
    }
  };
  widen(xlo, xhi);
  widen(ylo, yhi);

  const double px0 = 70, px1 = opt.width - 20.0;
  const double py0 = 30, py1 = opt.height - 45.0;
  auto to_px = [&](double u) { return px0 + (u - xlo) / (xhi - xlo) * (px1 - px0); };
  auto to_py = [&](double v) { return py1 - (v - ylo) / (yhi - ylo) * (py1 - py0); };

  std::string& svg = result.svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opt.width) +
         "\" height=\"" + std::to_string(opt.height) + "\" viewBox=\"0 0 " +
         std::to_string(opt.width) + " " + std::to_string(opt.height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";

  const detail::AxisTicks xt = detail::axis_ticks(xlo, xhi, opt.log_x);
  const detail::AxisTicks yt = detail::axis_ticks(ylo, yhi, opt.log_y);
  for (std::size_t i = 0; i < xt.at.size(); ++i) {
    const std::string x = detail::fmt("%.2f", to_px(xt.at[i]));
    svg += "<line x1=\"" + x + "\" y1=\"" + detail::fmt("%.2f", py0) + "\" x2=\"" + x +
           "\" y2=\"" + detail::fmt("%.2f", py1) + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + x + "\" y=\"" + detail::fmt("%.2f", py1 + 16) +
           "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\" "
           "text-anchor=\"middle\">" +
           xt.label[i] + "</text>\n";
  }
  for (std::size_t i = 0; i < yt.at.size(); ++i) {
    const std::string y = detail::fmt("%.2f", to_py(yt.at[i]));
    svg += "<line x1=\"" + detail::fmt("%.2f", px0) + "\" y1=\"" + y + "\" x2=\"" +
           detail::fmt("%.2f", px1) + "\" y2=\"" + y + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + detail::fmt("%.2f", px0 - 6) + "\" y=\"" + y +
           "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\" "
           "text-anchor=\"end\" dominant-baseline=\"middle\">" +
           yt.label[i] + "</text>\n";
  }
  svg += "<rect x=\"" + detail::fmt("%.2f", px0) + "\" y=\"" + detail::fmt("%.2f", py0) +
         "\" width=\"" + detail::fmt("%.2f", px1 - px0) + "\" height=\"" +
         detail::fmt("%.2f", py1 - py0) + "\" fill=\"none\" stroke=\"#333\"/>\n";

  if (!opt.title.empty())
    svg += "<text x=\"" + detail::fmt("%.2f", (px0 + px1) / 2) + "\" y=\"20\" "
           "font-family=\"sans-serif\" font-size=\"14\" fill=\"#333\" "
           "text-anchor=\"middle\">" +
           opt.title + "</text>\n";
  if (!opt.x_label.empty())
    svg += "<text x=\"" + detail::fmt("%.2f", (px0 + px1) / 2) + "\" y=\"" +
           std::to_string(opt.height - 10) +
           "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\" "
           "text-anchor=\"middle\">" +
           opt.x_label + "</text>\n";
  if (!opt.y_label.empty())
    svg += "<text x=\"16\" y=\"" + detail::fmt("%.2f", (py0 + py1) / 2) +
           "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\" "
           "text-anchor=\"middle\" transform=\"rotate(-90 16 " +
           detail::fmt("%.2f", (py0 + py1) / 2) + ")\">" + opt.y_label + "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    if (pts[s].empty()) continue;
    const char* color = palette[s % kPalette];
    if (pts[s].size() == 1) {
      svg += "<circle cx=\"" + detail::fmt("%.2f", to_px(pts[s][0].first)) + "\" cy=\"" +
             detail::fmt("%.2f", to_py(pts[s][0].second)) + "\" r=\"3\" fill=\"" + color +
             "\"/>\n";
      continue;
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts[s].size(); ++i) {
      if (i) svg += ' ';
      svg += detail::fmt("%.2f", to_px(pts[s][i].first)) + "," +
             detail::fmt("%.2f", to_py(pts[s][i].second));
    }
    svg += "\"/>\n";
  }

  bool any_label = false;
  for (const auto& s : series)
    if (!s.label.empty()) any_label = true;
  if (any_label) {
    double ly = py0 + 16;
    for (std::size_t s = 0; s < series.size(); ++s) {
      if (pts[s].empty() || series[s].label.empty()) continue;
      const double lx = px1 - 150;
      svg += "<line x1=\"" + detail::fmt("%.2f", lx) + "\" y1=\"" + detail::fmt("%.2f", ly - 4) +
             "\" x2=\"" + detail::fmt("%.2f", lx + 18) + "\" y2=\"" +
             detail::fmt("%.2f", ly - 4) + "\" stroke=\"" + palette[s % kPalette] +
             "\" stroke-width=\"1.5\"/>\n";
      svg += "<text x=\"" + detail::fmt("%.2f", lx + 24) + "\" y=\"" + detail::fmt("%.2f", ly) +
             "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\">" + series[s].label +
             "</text>\n";
      ly += 16;
    }
  }

  svg += "</svg>\n";
  return result;
}

}  // namespace kinnet
