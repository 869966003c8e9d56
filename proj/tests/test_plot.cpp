#include <doctest.h>

#include <cstdio>

#include "effort/errors.hpp"
#include "effort/json_util.hpp"
#include "effort/plot.hpp"

using namespace effort;

namespace {

int count(const std::string& s, const std::string& needle) {
  int n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("csv parsing") {
  const auto t = CsvTable::parse("a,b\n1,2\n3,\n");
  CHECK(t.header == std::vector<std::string>{"a", "b"});
  CHECK(t.column("a") == std::vector<double>{1.0, 3.0});
  CHECK(std::isnan(t.column("b")[1]));
  CHECK_THROWS_AS(t.column("c"), ConfigError);
  CHECK_THROWS_AS(CsvTable::parse("a,b\n1\n"), FormatError);
  CHECK_THROWS_AS(CsvTable::parse("a\nxyz\n"), FormatError);
  CHECK_THROWS_AS(CsvTable::parse(""), FormatError);
}

TEST_CASE("empty series list gives axes only") {
  ChartSpec spec;
  const std::string svg = render_svg({}, spec);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("viewBox=\"0 0 800 500\"") != std::string::npos);
  CHECK(count(svg, "<polyline") == 0);
  CHECK(count(svg, "<line") > 0);
}

TEST_CASE("two series give two polylines and a legend") {
  ChartSpec spec;
  spec.title = "loss <baseline & control>";
  PlotSeries a{"baseline", {0, 1, 2}, {1.0, 0.5, 0.25}};
  PlotSeries b{"control", {0, 1, 2}, {1.0, 0.4, 0.1}};
  const std::string svg = render_svg({a, b}, spec);
  CHECK(count(svg, "<polyline") == 2);
  CHECK(svg.find(">baseline<") != std::string::npos);
  CHECK(svg.find(">control<") != std::string::npos);
  CHECK(svg.find("&lt;baseline &amp; control&gt;") != std::string::npos);
  CHECK(render_svg({a, b}, spec) == svg);
}

TEST_CASE("log axes drop non-positive points") {
  ChartSpec spec;
  spec.log_y = true;
  PlotSeries a{"a", {0, 1, 2, 3}, {1.0, 0.0, 0.01, -1.0}};
  const std::string svg = render_svg({a}, spec);
  const auto p = svg.find("points=\"");
  const auto q = svg.find('"', p + 8);
  CHECK(count(svg.substr(p, q - p), ",") == 2);
  CHECK(svg.find("(log)") != std::string::npos);
}

TEST_CASE("plot from files is byte identical across calls") {
  write_text_file("test_plot_in.csv", "time,loss,other\n0,1,2\n0.5,0.6,1\n1,0.2,0.5\n");
  ChartSpec spec;
  spec.series = {{"test_plot_in.csv", "time", "loss", "loss"}, {"test_plot_in.csv", "time", "other", ""}};
  spec.output = "test_plot_a.svg";
  plot(spec);
  spec.output = "test_plot_b.svg";
  plot(spec);
  CHECK(read_text_file("test_plot_a.svg") == read_text_file("test_plot_b.svg"));
  spec.series[1].y = "missing";
  CHECK_THROWS_AS(plot(spec), ConfigError);
  spec.series = {{"nope.csv", "time", "loss", ""}};
  CHECK_THROWS_AS(plot(spec), IoError);
  for (const char* f : {"test_plot_in.csv", "test_plot_a.svg", "test_plot_b.svg"}) std::remove(f);
}
