#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "effort/config.hpp"
#include "effort/control.hpp"
#include "effort/dynamics.hpp"
#include "effort/optimizer.hpp"
#include "effort/task_moments.hpp"
#include "effort/value.hpp"

namespace effort {

enum class Scenario {
  single_neuron_effort,
  effort_allocation,
  task_switch,
  task_engagement,
  category_engagement,
  class_proportion,
  maml_multistep,
  lr_bilevel,
  nonlinear_approx,
  sgd_validation,
};

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);
std::vector<Scenario> all_scenarios();
std::string describe(Scenario s);

// Task description from the [task] section. Lists give one task per entry.
struct TaskParams {
  std::string family;  // two_gaussian, correlated_gaussian, semantic, moments_file
  std::vector<double> mu_x, sigma_x;
  std::vector<double> mu1, mu2, s1, s2, p;
  int levels = 4;
  std::vector<std::string> moments;
  bool bias = true;

  std::vector<TaskMoments> build() const;
};

struct RunConfig {
  Scenario scenario = Scenario::single_neuron_effort;
  std::uint64_t seed = 1;
  double threshold = 0.1;  // time-to-loss-threshold as a fraction of L(0)

  TaskParams task;
  int switch_period = 0;

  int hidden = 1;
  double tau_w = 1.0;
  double lambda = 0.0;
  double dt = 0.01;
  int steps = 100;
  double init_std = 0.01;
  double init_w = 0.0;  // single neuron
  std::string nonlinearity = "tanh";
  std::string basis = "none";  // none, rows1, cols1, rows2, cols2

  ValueSpec value;
  OptimizerSpec opt;
  Bounds bounds;
  int segment = 1;

  int sgd_batch = 128;
  int sgd_seeds = 20;
  int sgd_eval = 0;
  int sgd_every = 10;

  std::vector<int> steps_ahead;
  int eval_steps = 20;

  int class_batch = 256;

  std::string out_dir;
  int csv_stride = 1;

  Config config;  // effective configuration (preset plus overrides)
};

// Full key set with desk-scale defaults for a scenario.
Config preset(Scenario s);
// Overlays `cfg` on the preset named by [scenario] name. Unknown keys and bad
// values throw ConfigError.
RunConfig make_run_config(const Config& cfg);

struct ScenarioProblem {
  std::vector<TaskMoments> tasks;
  std::optional<BlockTaskSet> blocks;
  std::unique_ptr<Problem> problem;
  ControlSchedule neutral;  // baseline control with the configured bounds
  ValueSpec value;          // fixed_norm psi_norm = 0 resolved to the control width
};

// Everything except maml_multistep, which throws UnsupportedOperation.
ScenarioProblem build_problem(const RunConfig& rc);

struct RunResult {
  Scenario scenario = Scenario::single_neuron_effort;
  double V_baseline = 0.0;
  double V_control = 0.0;
  Trajectory baseline;
  Trajectory controlled;
  ControlSchedule control;
  OptTrace trace;
  std::map<std::string, double> scalars;
  std::map<std::string, std::vector<double>> series;
  // Extra CSV files written next to the result: name -> content.
  std::map<std::string, std::string> files;
  Config config;

  nlohmann::json to_json() const;
};

RunResult run(const RunConfig& rc);
RunResult run(const Config& cfg);

// Writes result.json, baseline.csv, controlled.csv, schedule.json, trace.csv
// and any extra files. Refuses an existing directory unless `force`.
void write_result(const RunResult& r, const std::string& dir, bool force, int csv_stride = 1);

struct SweepPoint {
  std::string value;
  std::optional<RunResult> result;
  std::string error;
};

// One run per value of `param` ("section.key"); failures are recorded per
// point. Results come back in input order regardless of thread count.
std::vector<SweepPoint> sweep(const Config& base, const std::string& param, const std::vector<std::string>& values,
                              int threads);

// Two tasks alternating every `period` steps over `total` steps.
TaskContext task_switch_schedule(const std::vector<TaskMoments>& tasks, int period, int total);
// Max loss in each period after a switch; one entry per switch.
std::vector<double> switch_peaks(const Trajectory& traj, int period);
// Peaks minus the optimal loss of the task switched to.
std::vector<double> switch_excess(const Trajectory& traj, int period, const std::vector<TaskMoments>& tasks);

// 1/2 Tr(sigma_y - sigma_xy^T sigma_x^+ sigma_xy), the best linear-regression loss.
double optimal_loss(const TaskMoments& task);
// Per-output share of optimal_loss (diagonal of the residual covariance / 2).
Vec output_residuals(const TaskMoments& task);
// Indices sorted by optimal loss, easiest first. Ties keep input order.
std::vector<int> difficulty_order(const std::vector<TaskMoments>& tasks);
std::vector<int> class_difficulty_order(const TaskMoments& task);

// Counts per class for batch size B from a category schedule, rounded by
// largest remainder so every step sums to B. Rows are steps.
std::vector<std::vector<int>> export_class_schedule(const ControlSchedule& phi, int batch,
                                                    std::vector<int>* fallback_steps = nullptr);
std::string class_schedule_csv(const std::vector<std::vector<int>>& counts);

// Intervals [start, end) in time units where |dL/dt| < frac * max |dL/dt|
// that last at least min_frac of the horizon.
std::vector<std::pair<double, double>> detect_plateaus(const std::vector<double>& loss, double dt, double frac = 0.01,
                                                       double min_frac = 0.05);
// First time with L < frac * L(0); -1 when never reached.
double time_to_threshold(const std::vector<double>& loss, double dt, double frac);
// Sum over steps of ||g_i|| dt on the raw control.
double total_effort(const ControlSchedule& control, double dt);
// Left-rule integral of the loss over the horizon.
double loss_integral(const Trajectory& traj);

}  // namespace effort
