#include "effort/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "effort/config.hpp"
#include "effort/errors.hpp"
#include "effort/json_util.hpp"

namespace effort {

CsvTable CsvTable::parse(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV");
  for (const auto& h : split_list(line)) {
    if (t.columns.count(h)) throw FormatError("duplicate CSV column: " + h);
    t.header.push_back(h);
    t.columns[h];
  }
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != t.header.size())
      throw FormatError("CSV row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " cells");
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = NAN;
      if (!cells[c].empty()) {
        try {
          v = parse_double(cells[c], "CSV row " + std::to_string(row));
        } catch (const ConfigError& e) {
          throw FormatError(e.what());
        }
      }
      t.columns[t.header[c]].push_back(v);
    }
  }
  return t;
}

CsvTable CsvTable::load(const std::string& path) {
  return parse(read_text_file(path));
}

const std::vector<double>& CsvTable::column(const std::string& name) const {
  auto it = columns.find(name);
  if (it == columns.end()) throw ConfigError("CSV has no column '" + name + "'");
  return it->second;
}

namespace {

constexpr double kW = 800, kH = 500;
constexpr double kLeft = 80, kRight = 170, kTop = 40, kBottom = 60;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  bool log = false;
  double lo = 0.0, hi = 1.0;  // in transformed units

  double tf(double v) const { return log ? std::log10(v) : v; }
  bool ok(double v) const { return std::isfinite(v) && (!log || v > 0.0); }
};

void fit(Axis& a, const std::vector<double>& vals) {
  double lo = INFINITY, hi = -INFINITY;
  for (double v : vals) {
    lo = std::min(lo, a.tf(v));
    hi = std::max(hi, a.tf(v));
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  } else if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
    lo -= 0.5;
    hi += 0.5;
  }
  a.lo = lo;
  a.hi = hi;
}

std::vector<double> ticks(const Axis& a) {
  std::vector<double> out;
  if (a.log) {
    for (double e = std::ceil(a.lo); e <= a.hi + 1e-9; e += 1.0) out.push_back(e);
    if (out.size() >= 2) return out;
    out.clear();
  }
  for (int k = 0; k <= 5; ++k) out.push_back(a.lo + (a.hi - a.lo) * k / 5.0);
  return out;
}

}  // namespace

std::string render_svg(const std::vector<PlotSeries>& series, const ChartSpec& spec) {
  Axis ax, ay;
  ax.log = spec.log_x;
  ay.log = spec.log_y;
  std::vector<std::vector<std::pair<double, double>>> pts(series.size());
  std::vector<double> xs, ys;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ps = series[s];
    const std::size_t n = std::min(ps.x.size(), ps.y.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!ax.ok(ps.x[i]) || !ay.ok(ps.y[i])) continue;
      pts[s].emplace_back(ps.x[i], ps.y[i]);
      xs.push_back(ps.x[i]);
      ys.push_back(ps.y[i]);
    }
  }
  fit(ax, xs);
  fit(ay, ys);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (ax.tf(v) - ax.lo) / (ax.hi - ax.lo) * pw; };
  auto py = [&](double v) { return kTop + ph - (ay.tf(v) - ay.lo) / (ay.hi - ay.lo) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" viewBox=\"0 0 800 500\">\n";
  o << "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
  if (!spec.title.empty())
    o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << escape(spec.title) << "</text>\n";
  o << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (double t : ticks(ax)) {
    const double x = kLeft + (t - ax.lo) / (ax.hi - ax.lo) * pw;
    const double label = ax.log ? std::pow(10.0, t) : t;
    o << "<line x1=\"" << num(x) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(x) << "\" y2=\""
      << num(kTop + ph + 5) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << num(x) << "\" y=\"" << num(kTop + ph + 20) << "\" text-anchor=\"middle\" font-size=\"12\">"
      << tick_label(label) << "</text>\n";
  }
  for (double t : ticks(ay)) {
    const double y = kTop + ph - (t - ay.lo) / (ay.hi - ay.lo) * ph;
    const double label = ay.log ? std::pow(10.0, t) : t;
    o << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kLeft) << "\" y2=\"" << num(y)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\" font-size=\"12\">"
      << tick_label(label) << "</text>\n";
  }
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kH - 15)
    << "\" text-anchor=\"middle\" font-size=\"14\">" << escape(spec.x_label) << (ax.log ? " (log)" : "")
    << "</text>\n";
  o << "<text x=\"20\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 20 "
    << num(kTop + ph / 2) << ")\">" << escape(spec.y_label) << (ay.log ? " (log)" : "") << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % (sizeof kColors / sizeof kColors[0])];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts[s].size(); ++i) {
      if (i) o << ' ';
      o << num(px(pts[s][i].first)) << ',' << num(py(pts[s][i].second));
    }
    o << "\"/>\n";
    const double ly = kTop + 15 + 20.0 * static_cast<double>(s);
    const double lx = kW - kRight + 15;
    o << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 25) << "\" y2=\"" << num(ly)
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << num(lx + 30) << "\" y=\"" << num(ly + 4) << "\" font-size=\"12\">"
      << escape(series[s].label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void plot(const ChartSpec& spec) {
  std::vector<PlotSeries> series;
  for (const auto& ss : spec.series) {
    const CsvTable t = CsvTable::load(ss.csv);
    PlotSeries ps;
    ps.label = ss.label.empty() ? ss.y : ss.label;
    ps.x = t.column(ss.x);
    ps.y = t.column(ss.y);
    series.push_back(std::move(ps));
  }
  if (spec.output.empty()) throw ConfigError("plot needs an output path");
  write_text_file(spec.output, render_svg(series, spec));
}

}  // namespace effort
