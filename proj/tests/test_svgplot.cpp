#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "kinnet/svgplot.hpp"

using namespace kinnet;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1))
    ++n;
  return n;
}

}  // namespace

TEST_CASE("a single series renders as one polyline", "[svgplot]") {
  const PlotSeries s{"y1", {0.0, 1.0, 2.0, 3.0}, {1.0, 0.8, 0.5, 0.1}};
  const PlotResult r = render_line_plot(std::span(&s, 1), {});
  CHECK(count_of(r.svg, "<polyline") == 1);
  CHECK(r.dropped_points == 0);
  CHECK(r.svg.find("<svg xmlns") == 0);
  CHECK(r.svg.rfind("</svg>\n") == r.svg.size() - 7);
}

TEST_CASE("log axes drop unrepresentable points and report the count", "[svgplot]") {
  const PlotSeries s{"y1", {0.0, 1e-5, 1e-2, 10.0}, {1.0, 0.9, 0.5, 0.2}};
  PlotOptions opt;
  opt.log_x = true;
  const PlotResult r = render_line_plot(std::span(&s, 1), opt);
  CHECK(r.dropped_points == 1);
  CHECK(count_of(r.svg, "<polyline") == 1);
  CHECK(r.svg.find("1e-5") != std::string::npos);
}

TEST_CASE("overlays draw one polyline and legend entry per series", "[svgplot]") {
  const std::vector<PlotSeries> series{
      {"reference y1", {0, 1, 2}, {1.0, 0.6, 0.3}},
      {"predicted y1", {0, 1, 2}, {1.0, 0.62, 0.28}},
  };
  const PlotResult r = render_line_plot(series, {});
  CHECK(count_of(r.svg, "<polyline") == 2);
  CHECK(r.svg.find("reference y1") != std::string::npos);
  CHECK(r.svg.find("predicted y1") != std::string::npos);
}

TEST_CASE("an entirely unplottable input is refused", "[svgplot]") {
  const PlotSeries s{"y", {0.0, -1.0}, {1.0, 2.0}};
  PlotOptions opt;
  opt.log_x = true;
  CHECK_THROWS_AS(render_line_plot(std::span(&s, 1), opt), config_error);
}

TEST_CASE("mismatched coordinate lengths are refused", "[svgplot]") {
  const PlotSeries s{"y", {0.0, 1.0}, {1.0}};
  CHECK_THROWS_AS(render_line_plot(std::span(&s, 1), {}), dimension_error);
}

TEST_CASE("a lone surviving point becomes a marker", "[svgplot]") {
  const PlotSeries s{"y", {5.0}, {2.0}};
  const PlotResult r = render_line_plot(std::span(&s, 1), {});
  CHECK(count_of(r.svg, "<circle") == 1);
  CHECK(count_of(r.svg, "<polyline") == 0);
}

TEST_CASE("rendering is deterministic", "[svgplot]") {
  const std::vector<PlotSeries> series{
      {"loss", {1, 10, 100, 1000}, {1.0, 0.1, 0.01, 0.001}},
  };
  PlotOptions opt;
  opt.log_x = true;
  opt.log_y = true;
  opt.title = "training loss";
  opt.x_label = "update";
  opt.y_label = "loss";
  const PlotResult a = render_line_plot(series, opt);
  const PlotResult b = render_line_plot(series, opt);
  CHECK(a.svg == b.svg);
  CHECK(a.svg.find("training loss") != std::string::npos);
  CHECK(a.svg.find("1e-3") != std::string::npos);
}
