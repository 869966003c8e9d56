#pragma once

#include <map>
#include <string>
#include <vector>

namespace effort {

// Parsed numeric CSV with a header row. Empty cells read as NaN.
struct CsvTable {
  std::vector<std::string> header;
  std::map<std::string, std::vector<double>> columns;

  static CsvTable parse(const std::string& text);
  static CsvTable load(const std::string& path);
  const std::vector<double>& column(const std::string& name) const;
};

struct SeriesSpec {
  std::string csv;  // path
  std::string x = "time";
  std::string y = "loss";
  std::string label;
};

struct ChartSpec {
  std::vector<SeriesSpec> series;
  std::string title;
  std::string x_label = "time";
  std::string y_label = "loss";
  bool log_x = false;
  bool log_y = false;
  std::string output;
};

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

// 800x500 SVG. Non-finite points, and non-positive ones on log axes, are
// dropped. Same input, same bytes.
std::string render_svg(const std::vector<PlotSeries>& series, const ChartSpec& spec);
// Loads the CSVs named by spec.series (missing column -> ConfigError) and
// writes spec.output.
void plot(const ChartSpec& spec);

}  // namespace effort
