#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "effort/config.hpp"
#include "effort/errors.hpp"
#include "effort/experiments.hpp"
#include "effort/idx.hpp"
#include "effort/json_util.hpp"
#include "effort/plot.hpp"
#include "effort/task_moments.hpp"
#include "effort/value.hpp"

namespace fs = std::filesystem;
using namespace effort;

namespace {

struct ConfigArgs {
  std::string config;
  std::string scenario;
  std::vector<std::string> sets;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config, "config file");
  cmd->add_option("--scenario", a.scenario, "start from a preset instead of a config file");
  cmd->add_option("--set", a.sets, "override, section.key=value (repeatable)");
}

Config load_config(const ConfigArgs& a) {
  Config c;
  if (!a.config.empty()) {
    try {
      c = Config::load(a.config);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
  }
  if (!a.scenario.empty()) {
    if (c.has("scenario", "name") && c.get("scenario", "name") != a.scenario)
      throw ConfigError("--scenario disagrees with the config file");
    c.set("scenario", "name", a.scenario);
  }
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
    c.set_path(trim(s.substr(0, eq)), s.substr(eq + 1));
  }
  if (!c.has("scenario", "name")) throw ConfigError("give --config or --scenario");
  return c;
}

std::string out_path(const std::string& out_dir, const std::string& p) {
  if (out_dir.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(out_dir) / p).string();
}

void print_summary(const RunResult& r, const std::string& dir) {
  std::printf("scenario %s\n", to_string(r.scenario).c_str());
  for (const auto& [k, v] : r.scalars) std::printf("  %-32s %s\n", k.c_str(), fmt_double(v).c_str());
  std::printf("written to %s\n", dir.c_str());
}

int cmd_run(const ConfigArgs& ca, const std::string& out_dir, bool force) {
  const RunConfig rc = make_run_config(load_config(ca));
  const std::string dir = out_dir.empty() ? rc.out_dir : out_dir;
  if (fs::exists(dir) && !force) throw IoError("output directory exists (use --force): " + dir);
  const RunResult r = run(rc);
  write_result(r, dir, force, rc.csv_stride);
  print_summary(r, dir);
  return 0;
}

int cmd_sweep(const ConfigArgs& ca, const std::string& param, const std::string& values, const std::string& out_dir,
              bool force, int threads) {
  const Config base = load_config(ca);
  const RunConfig rc = make_run_config(base);  // validates the base before spending time
  const auto vals = split_list(values);
  if (vals.empty()) throw ConfigError("--values is empty");
  const std::string dir = out_dir.empty() ? rc.out_dir + "_sweep" : out_dir;
  if (fs::exists(dir) && !force) throw IoError("output directory exists (use --force): " + dir);
  fs::create_directories(dir);
  const auto points = sweep(base, param, vals, threads > 0 ? threads : default_threads());
  std::ostringstream csv;
  csv << "value,V_baseline,V_control,effort,error\n";
  int failed = 0;
  for (const auto& pt : points) {
    if (pt.result) {
      const auto& r = *pt.result;
      const auto eff = r.scalars.find("effort");
      csv << pt.value << ',' << fmt_double(r.V_baseline) << ',' << fmt_double(r.V_control) << ','
          << (eff == r.scalars.end() ? "" : fmt_double(eff->second)) << ",\n";
      write_result(r, (fs::path(dir) / (param + "=" + pt.value)).string(), true, rc.csv_stride);
    } else {
      ++failed;
      std::string err = pt.error;
      for (char& c : err)
        if (c == ',' || c == '\n') c = ';';
      csv << pt.value << ",,,," << err << '\n';
      std::fprintf(stderr, "%s=%s failed: %s\n", param.c_str(), pt.value.c_str(), pt.error.c_str());
    }
  }
  write_text_file((fs::path(dir) / "sweep.csv").string(), csv.str());
  std::printf("%zu points, %d failed, written to %s\n", points.size(), failed, dir.c_str());
  return failed ? 3 : 0;
}

int cmd_grad_check(const ConfigArgs& ca, int coords, double h, double fill) {
  ConfigArgs a = ca;
  if (a.config.empty() && a.scenario.empty()) a.scenario = "single_neuron_effort";
  const RunConfig rc = make_run_config(load_config(a));
  const ScenarioProblem sp = build_problem(rc);
  ControlSchedule c = sp.neutral;
  if (c.kind != ControlKind::init_weights) c.values.setConstant(fill);
  const FdReport rep = fd_check(*sp.problem, c, sp.value, coords, h, rc.seed);
  std::printf("scenario %s, %zu coordinates, h = %s\n", to_string(rc.scenario).c_str(), rep.coords.size(),
              fmt_double(h).c_str());
  for (std::size_t i = 0; i < rep.coords.size(); ++i)
    std::printf("  coord %-8d analytic %-24s numeric %s\n", rep.coords[i], fmt_double(rep.analytic[i]).c_str(),
                fmt_double(rep.numeric[i]).c_str());
  std::printf("max rel err %s\n", fmt_double(rep.max_rel).c_str());
  return 0;
}

int cmd_moments(const std::string& images, const std::string& labels, const std::string& digits,
                const std::string& mode, const std::string& out, int limit, bool balanced, bool no_bias) {
  std::set<int> ds;
  for (const auto& s : split_list(digits)) {
    const int d = parse_int(s, "--digits");
    if (d < 0 || d > 255) throw ConfigError("--digits must be in [0, 255]");
    ds.insert(d);
  }
  DigitFilter f;
  if (mode == "pair") {
    const auto list = split_list(digits);
    if (list.size() != 2 || ds.size() != 2) throw ConfigError("pair mode needs two distinct digits");
    f = binary_pair_filter(parse_int(list[0], "--digits"), parse_int(list[1], "--digits"));
  } else if (mode == "onehot") {
    if (ds.size() < 2) throw ConfigError("onehot mode needs at least two digits");
    f = one_hot_filter(ds);
  } else {
    throw ConfigError("--mode must be pair or onehot");
  }
  MomentOptions opts;
  opts.limit = limit;
  opts.class_balanced = balanced;
  opts.bias = !no_bias;
  const TaskMoments m = estimate_moments(read_idx_file(images), read_idx_file(labels), f, opts);
  save_moments(m, out);
  std::printf("moments %dx%d written to %s (Tr sigma_y = %s)\n", m.input_dim, m.output_dim, out.c_str(),
              fmt_double(m.sigma_y.trace()).c_str());
  return 0;
}

int cmd_plot(const std::vector<std::string>& series, const ChartSpec& base, const std::string& out_dir) {
  ChartSpec spec = base;
  for (const auto& s : series) {
    // csv:x:y[:label]
    std::vector<std::string> parts;
    std::string part;
    std::istringstream in(s);
    while (std::getline(in, part, ':')) parts.push_back(part);
    if (parts.size() < 3 || parts.size() > 4) throw ConfigError("--series expects csv:x:y[:label], got '" + s + "'");
    SeriesSpec ss;
    ss.csv = out_path(out_dir, parts[0]);
    ss.x = parts[1];
    ss.y = parts[2];
    ss.label = parts.size() == 4 ? parts[3] : parts[2];
    spec.series.push_back(ss);
  }
  spec.output = out_path(out_dir, spec.output);
  plot(spec);
  std::printf("wrote %s\n", spec.output.c_str());
  return 0;
}

int cmd_presets(const std::string& action, const std::string& name) {
  if (action == "list") {
    for (Scenario s : all_scenarios()) std::printf("%-22s %s\n", to_string(s).c_str(), describe(s).c_str());
    return 0;
  }
  if (action == "show") {
    if (name.empty()) throw ConfigError("presets show needs a scenario name");
    std::fputs(preset(scenario_from_string(name)).serialize().c_str(), stdout);
    return 0;
  }
  throw ConfigError("presets expects list or show");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal control of learning effort in linear networks"};
  app.require_subcommand(1);
  app.fallthrough();

  ConfigArgs run_args, sweep_args, gc_args;
  std::string out_dir;
  bool force = false;
  app.add_option("--out-dir", out_dir, "output directory (also the base for relative paths)");
  app.add_flag("--force", force, "allow writing into an existing directory");

  auto* run_cmd = app.add_subcommand("run", "optimize a control schedule for one scenario");
  add_config_flags(run_cmd, run_args);
  run_cmd->add_option("--out-dir", out_dir, "output directory");
  run_cmd->add_flag("--force", force, "overwrite an existing output directory");

  std::string param, values;
  int threads = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "run a scenario once per value of one key");
  add_config_flags(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--param", param, "section.key to vary")->required();
  sweep_cmd->add_option("--values", values, "comma separated values")->required();
  sweep_cmd->add_option("--threads", threads, "worker threads (default LE_THREADS or hardware)");
  sweep_cmd->add_option("--out-dir", out_dir, "output directory");
  sweep_cmd->add_flag("--force", force, "overwrite an existing output directory");

  int coords = 20;
  double h = 1e-4, fill = 0.1;
  auto* gc_cmd = app.add_subcommand("grad-check", "compare the adjoint gradient with central differences");
  add_config_flags(gc_cmd, gc_args);
  gc_cmd->add_option("--coords", coords, "number of control coordinates to probe");
  gc_cmd->add_option("--step", h, "finite-difference step");
  gc_cmd->add_option("--fill", fill, "constant control value to test at");

  std::string images, labels, digits, mode = "pair", mout;
  int limit = 0;
  bool balanced = false, no_bias = false;
  auto* mom_cmd = app.add_subcommand("moments", "estimate task moments from IDX image and label files");
  mom_cmd->add_option("--images", images, "IDX image file")->required();
  mom_cmd->add_option("--labels", labels, "IDX label file")->required();
  mom_cmd->add_option("--digits", digits, "digits to keep, e.g. 3,8")->required();
  mom_cmd->add_option("--mode", mode, "pair (a -> +1, b -> -1) or onehot");
  mom_cmd->add_option("--out", mout, "output JSON")->required();
  mom_cmd->add_option("--limit", limit, "use at most this many images");
  mom_cmd->add_flag("--balanced", balanced, "weight classes equally");
  mom_cmd->add_flag("--no-bias", no_bias, "do not append a constant input");

  std::vector<std::string> series;
  ChartSpec chart;
  auto* plot_cmd = app.add_subcommand("plot", "draw CSV columns as an SVG line chart");
  plot_cmd->add_option("--series", series, "csv:x:y[:label] (repeatable)");
  plot_cmd->add_option("--title", chart.title);
  plot_cmd->add_option("--x-label", chart.x_label);
  plot_cmd->add_option("--y-label", chart.y_label);
  plot_cmd->add_flag("--log-x", chart.log_x);
  plot_cmd->add_flag("--log-y", chart.log_y);
  plot_cmd->add_option("--out", chart.output, "output SVG")->required();

  std::string action, preset_name;
  auto* presets_cmd = app.add_subcommand("presets", "list scenarios or print a preset config");
  presets_cmd->add_option("action", action, "list or show")->required();
  presets_cmd->add_option("name", preset_name, "scenario name for show");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run_cmd) return cmd_run(run_args, out_dir, force);
    if (*sweep_cmd) return cmd_sweep(sweep_args, param, values, out_dir, force, threads);
    if (*gc_cmd) return cmd_grad_check(gc_args, coords, h, fill);
    if (*mom_cmd) return cmd_moments(out_path(out_dir, images), out_path(out_dir, labels), digits, mode,
                                     out_path(out_dir, mout), limit, balanced, no_bias);
    if (*plot_cmd) return cmd_plot(series, chart, out_dir);
    if (*presets_cmd) return cmd_presets(action, preset_name);
  } catch (const Diverged& e) {
    std::fprintf(stderr, "error: diverged at step %d: %s\n", e.step(), e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
