#include "effort/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <numeric>
#include <sstream>

#include "effort/errors.hpp"
#include "effort/json_util.hpp"

namespace effort {

namespace {

const std::pair<Scenario, const char*> kNames[] = {
    {Scenario::single_neuron_effort, "single_neuron_effort"},
    {Scenario::effort_allocation, "effort_allocation"},
    {Scenario::task_switch, "task_switch"},
    {Scenario::task_engagement, "task_engagement"},
    {Scenario::category_engagement, "category_engagement"},
    {Scenario::class_proportion, "class_proportion"},
    {Scenario::maml_multistep, "maml_multistep"},
    {Scenario::lr_bilevel, "lr_bilevel"},
    {Scenario::nonlinear_approx, "nonlinear_approx"},
    {Scenario::sgd_validation, "sgd_validation"},
};

}  // namespace

std::string to_string(Scenario s) {
  for (const auto& [k, name] : kNames)
    if (k == s) return name;
  return "?";
}

Scenario scenario_from_string(const std::string& s) {
  for (const auto& [k, name] : kNames)
    if (s == name) return k;
  throw ConfigError("unknown scenario: " + s);
}

std::vector<Scenario> all_scenarios() {
  std::vector<Scenario> out;
  for (const auto& [k, name] : kNames) out.push_back(k);
  return out;
}

std::string describe(Scenario s) {
  switch (s) {
    case Scenario::single_neuron_effort: return "single neuron with a scalar effort signal on a two-Gaussian task";
    case Scenario::effort_allocation: return "gain modulation of a two-layer network learning one task";
    case Scenario::task_switch: return "gain modulation while the task alternates between two Gaussian datasets";
    case Scenario::task_engagement: return "engagement coefficients over three regression tasks";
    case Scenario::category_engagement: return "per-class engagement on a classification task";
    case Scenario::class_proportion: return "category engagement exported as per-step class counts";
    case Scenario::maml_multistep: return "initial weights optimized through several inner learning steps";
    case Scenario::lr_bilevel: return "time-varying learning rate on the hierarchical semantic task";
    case Scenario::nonlinear_approx: return "gain control of a tanh network through its linearized dynamics";
    case Scenario::sgd_validation: return "mean-field single-neuron dynamics against minibatch SGD";
  }
  return "";
}

// ---------------------------------------------------------------- presets

namespace {

Config common_defaults(Scenario s) {
  Config c;
  c.set("scenario", "name", to_string(s));
  c.set("scenario", "seed", "1");
  c.set("scenario", "threshold", "0.1");

  c.set("task", "family", "correlated_gaussian");
  c.set("task", "mu_x", "2");
  c.set("task", "sigma_x", "1");
  c.set("task", "mu1", "3");
  c.set("task", "mu2", "1");
  c.set("task", "s1", "1");
  c.set("task", "s2", "1");
  c.set("task", "p", "0.8");
  c.set("task", "levels", "4");
  c.set("task", "moments", "");
  c.set("task", "bias", "true");
  c.set("task", "switch_period", "0");

  c.set("dynamics", "hidden", "8");
  c.set("dynamics", "tau_w", "1");
  c.set("dynamics", "lambda", "0");
  c.set("dynamics", "dt", "0.05");
  c.set("dynamics", "steps", "400");
  c.set("dynamics", "init_std", "0.01");
  c.set("dynamics", "init_w", "0");
  c.set("dynamics", "nonlinearity", "tanh");
  c.set("dynamics", "basis", "none");

  c.set("value", "gamma", "0.99");
  c.set("value", "eta", "1");
  c.set("value", "cost", "exp_frobenius");
  c.set("value", "beta", "0.3");
  c.set("value", "mu_psi", "1");
  c.set("value", "psi_norm", "0");
  c.set("value", "offset", "0");

  c.set("optimizer", "alpha_g", "10");
  c.set("optimizer", "iters", "200");
  c.set("optimizer", "update_rule", "plain");
  c.set("optimizer", "backtracking", "true");
  c.set("optimizer", "max_halvings", "20");
  c.set("optimizer", "checkpoint_stride", "1");
  c.set("optimizer", "lower", "-0.5");
  c.set("optimizer", "upper", "0.5");
  c.set("optimizer", "segment", "1");

  c.set("sgd", "batch", "128");
  c.set("sgd", "seeds", "20");
  c.set("sgd", "eval_samples", "0");
  c.set("sgd", "every", "10");

  c.set("maml", "steps_ahead", "1, 5, 20");
  c.set("maml", "eval_steps", "20");

  c.set("curriculum", "batch", "256");

  c.set("output", "dir", "runs/" + to_string(s));
  c.set("output", "csv_stride", "1");
  return c;
}

}  // namespace

Config preset(Scenario s) {
  Config c = common_defaults(s);
  switch (s) {
    case Scenario::single_neuron_effort:
    case Scenario::sgd_validation:
      c.set("task", "family", "two_gaussian");
      c.set("task", "bias", "false");
      c.set("dynamics", "hidden", "1");
      c.set("dynamics", "lambda", "0.1");
      c.set("dynamics", "dt", "0.002");
      c.set("dynamics", "steps", "3000");
      c.set("value", "cost", "quadratic");
      c.set("optimizer", "iters", "700");
      c.set("optimizer", "lower", "0");
      if (s == Scenario::sgd_validation) {
        c.set("dynamics", "dt", "0.001");
        c.set("optimizer", "iters", "0");
      }
      break;
    case Scenario::effort_allocation:
      c.set("dynamics", "hidden", "6");
      c.set("dynamics", "lambda", "0.01");
      break;
    case Scenario::task_switch:
      c.set("task", "mu1", "3, -2");
      c.set("task", "mu2", "1, 2");
      c.set("task", "s1", "1, 1");
      c.set("task", "s2", "1, 1");
      c.set("task", "p", "0.8, 0.2");
      c.set("task", "switch_period", "140");
      c.set("dynamics", "lambda", "0.001");
      c.set("dynamics", "steps", "1680");
      c.set("optimizer", "alpha_g", "1");
      c.set("optimizer", "iters", "1000");
      break;
    case Scenario::task_engagement:
      c.set("task", "family", "two_gaussian");
      c.set("task", "mu_x", "2, 1, 0.5");
      c.set("task", "sigma_x", "1, 1, 1");
      c.set("dynamics", "hidden", "20");
      c.set("dynamics", "steps", "800");
      c.set("dynamics", "init_std", "0.0001");
      c.set("value", "cost", "anchored_norm");
      c.set("value", "beta", "0.1");
      c.set("optimizer", "alpha_g", "1");
      c.set("optimizer", "iters", "300");
      c.set("optimizer", "lower", "0");
      c.set("optimizer", "upper", "2");
      break;
    case Scenario::category_engagement:
    case Scenario::class_proportion:
      c.set("task", "family", "semantic");
      c.set("task", "bias", "false");
      c.set("dynamics", "hidden", "30");
      c.set("dynamics", "init_std", "0.001");
      c.set("value", "cost", "fixed_norm");
      c.set("value", "beta", "5");
      c.set("optimizer", "alpha_g", "1");
      c.set("optimizer", "lower", "0");
      c.set("optimizer", "upper", "2");
      break;
    case Scenario::maml_multistep:
      c.set("task", "mu1", "3, -2, 1");
      c.set("task", "mu2", "1, 2, -2");
      c.set("task", "s1", "1, 1, 1");
      c.set("task", "s2", "1, 1, 1");
      c.set("task", "p", "0.8, 0.2, 0.5");
      c.set("dynamics", "init_std", "0.1");
      c.set("value", "gamma", "1");
      c.set("value", "cost", "none");
      c.set("value", "beta", "0");
      c.set("optimizer", "alpha_g", "0.005");
      c.set("optimizer", "iters", "2000");
      c.set("optimizer", "update_rule", "adaptive_moments");
      c.set("optimizer", "lower", "-inf");
      c.set("optimizer", "upper", "inf");
      break;
    case Scenario::lr_bilevel:
      c.set("task", "family", "semantic");
      c.set("task", "bias", "false");
      c.set("dynamics", "dt", "0.02");
      c.set("dynamics", "steps", "750");
      c.set("dynamics", "init_std", "0.0001");
      c.set("value", "gamma", "1");
      c.set("value", "cost", "quadratic");
      c.set("value", "beta", "1");
      c.set("optimizer", "alpha_g", "0.005");
      c.set("optimizer", "iters", "800");
      c.set("optimizer", "update_rule", "adaptive_moments");
      c.set("optimizer", "lower", "-0.95");
      c.set("optimizer", "upper", "1");
      break;
    case Scenario::nonlinear_approx:
      c.set("dynamics", "dt", "0.01");
      c.set("dynamics", "steps", "1000");
      c.set("optimizer", "iters", "200");
      c.set("sgd", "batch", "32");
      c.set("sgd", "seeds", "1");
      c.set("sgd", "eval_samples", "4096");
      break;
  }
  return c;
}

RunConfig make_run_config(const Config& user) {
  if (!user.has("scenario", "name")) throw ConfigError("config needs [scenario] name");
  const Scenario s = scenario_from_string(user.get("scenario", "name"));
  Config c = preset(s);
  for (const auto& [sec, keys] : user.sections()) {
    for (const auto& [k, v] : keys)
      if (!c.has(sec, k)) throw ConfigError("unknown config key " + sec + "." + k);
  }
  c.merge(user);

  RunConfig rc;
  rc.scenario = s;
  rc.config = c;
  const int seed = c.get_int("scenario", "seed");
  if (seed < 0) throw ConfigError("scenario.seed must be >= 0");
  rc.seed = static_cast<std::uint64_t>(seed);
  rc.threshold = c.get_double("scenario", "threshold");

  TaskParams& t = rc.task;
  t.family = c.get("task", "family");
  t.mu_x = c.get_list("task", "mu_x");
  t.sigma_x = c.get_list("task", "sigma_x");
  t.mu1 = c.get_list("task", "mu1");
  t.mu2 = c.get_list("task", "mu2");
  t.s1 = c.get_list("task", "s1");
  t.s2 = c.get_list("task", "s2");
  t.p = c.get_list("task", "p");
  t.levels = c.get_int("task", "levels");
  t.moments = c.get_strings("task", "moments");
  t.bias = c.get_bool("task", "bias");
  rc.switch_period = c.get_int("task", "switch_period");

  rc.hidden = c.get_int("dynamics", "hidden");
  rc.tau_w = c.get_double("dynamics", "tau_w");
  rc.lambda = c.get_double("dynamics", "lambda");
  rc.dt = c.get_double("dynamics", "dt");
  rc.steps = c.get_int("dynamics", "steps");
  rc.init_std = c.get_double("dynamics", "init_std");
  rc.init_w = c.get_double("dynamics", "init_w");
  rc.nonlinearity = c.get("dynamics", "nonlinearity");
  rc.basis = c.get("dynamics", "basis");

  rc.value.gamma = c.get_double("value", "gamma");
  rc.value.eta = c.get_double("value", "eta");
  try {
    rc.value.cost.kind = cost_kind_from_string(c.get("value", "cost"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  rc.value.cost.beta = c.get_double("value", "beta");
  rc.value.cost.mu_psi = c.get_double("value", "mu_psi");
  rc.value.cost.Psi = c.get_double("value", "psi_norm");
  rc.value.cost.offset = c.get_double("value", "offset");

  rc.opt.alpha_g = c.get_double("optimizer", "alpha_g");
  rc.opt.iters = c.get_int("optimizer", "iters");
  rc.opt.update_rule = update_rule_from_string(c.get("optimizer", "update_rule"));
  rc.opt.backtracking = c.get_bool("optimizer", "backtracking");
  rc.opt.max_halvings = c.get_int("optimizer", "max_halvings");
  rc.opt.checkpoint_stride = c.get_int("optimizer", "checkpoint_stride");
  rc.opt.seed = rc.seed;
  rc.bounds.lo = c.get_double("optimizer", "lower");
  rc.bounds.hi = c.get_double("optimizer", "upper");
  rc.segment = c.get_int("optimizer", "segment");

  rc.sgd_batch = c.get_int("sgd", "batch");
  rc.sgd_seeds = c.get_int("sgd", "seeds");
  rc.sgd_eval = c.get_int("sgd", "eval_samples");
  rc.sgd_every = c.get_int("sgd", "every");

  for (double v : c.get_list("maml", "steps_ahead")) {
    if (v != std::floor(v) || v < 1) throw ConfigError("maml.steps_ahead entries must be positive integers");
    rc.steps_ahead.push_back(static_cast<int>(v));
  }
  rc.eval_steps = c.get_int("maml", "eval_steps");
  rc.class_batch = c.get_int("curriculum", "batch");
  rc.out_dir = c.get("output", "dir");
  rc.csv_stride = c.get_int("output", "csv_stride");

  if (rc.hidden < 1) throw ConfigError("dynamics.hidden must be >= 1");
  if (rc.steps < 1) throw ConfigError("dynamics.steps must be >= 1");
  if (!(rc.dt > 0.0) || !(rc.tau_w > 0.0)) throw ConfigError("dt and tau_w must be positive");
  if (rc.lambda < 0.0) throw ConfigError("dynamics.lambda must be >= 0");
  if (rc.init_std < 0.0) throw ConfigError("dynamics.init_std must be >= 0");
  if (rc.bounds.lo > rc.bounds.hi) throw ConfigError("optimizer.lower exceeds optimizer.upper");
  if (rc.segment < 1 || rc.steps % rc.segment != 0) throw ConfigError("optimizer.segment must divide dynamics.steps");
  if (!(rc.threshold > 0.0)) throw ConfigError("scenario.threshold must be positive");
  if (rc.sgd_batch < 1 || rc.sgd_seeds < 1 || rc.sgd_every < 1 || rc.sgd_eval < 0)
    throw ConfigError("bad [sgd] settings");
  if (rc.eval_steps < 1) throw ConfigError("maml.eval_steps must be >= 1");
  if (rc.class_batch < 1) throw ConfigError("curriculum.batch must be >= 1");
  if (rc.csv_stride < 1) throw ConfigError("output.csv_stride must be >= 1");
  try {
    rc.value.validate();
    rc.opt.validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

// ---------------------------------------------------------------- tasks

namespace {

std::size_t list_count(std::initializer_list<const std::vector<double>*> lists, const std::string& what) {
  std::size_t n = 0;
  for (const auto* l : lists) n = std::max(n, l->size());
  if (n == 0) throw ConfigError(what + ": task lists are empty");
  for (const auto* l : lists)
    if (l->size() != n && l->size() != 1) throw ConfigError(what + ": task lists have different lengths");
  return n;
}

double pick(const std::vector<double>& v, std::size_t i) {
  return v.size() == 1 ? v[0] : v[i];
}

}  // namespace

std::vector<TaskMoments> TaskParams::build() const {
  std::vector<TaskMoments> out;
  if (family == "two_gaussian") {
    const std::size_t n = list_count({&mu_x, &sigma_x}, family);
    for (std::size_t i = 0; i < n; ++i) out.push_back(two_gaussian_moments({pick(mu_x, i), pick(sigma_x, i)}));
  } else if (family == "correlated_gaussian") {
    const std::size_t n = list_count({&mu1, &mu2, &s1, &s2, &p}, family);
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(correlated_gaussian_moments({pick(mu1, i), pick(mu2, i), pick(s1, i), pick(s2, i), pick(p, i)}));
  } else if (family == "semantic") {
    out.push_back(semantic_moments(levels));
  } else if (family == "moments_file") {
    if (moments.empty()) throw ConfigError("task.moments needs at least one path");
    for (const auto& path : moments) out.push_back(load_moments(path));
  } else {
    throw ConfigError("unknown task family: " + family);
  }
  if (bias)
    for (auto& t : out) t = with_bias(t);
  return out;
}

// ---------------------------------------------------------------- analyses

TaskContext task_switch_schedule(const std::vector<TaskMoments>& tasks, int period, int total) {
  if (tasks.size() != 2) throw InvalidParameter("task switching needs exactly two tasks");
  if (period < 1) throw InvalidParameter("switch period must be >= 1");
  if (period > total) throw InvalidParameter("switch period exceeds the horizon");
  if (total % period != 0) throw InvalidParameter("switch period must divide the number of steps");
  TaskContext ctx;
  ctx.tasks = tasks;
  ctx.switch_period = period;
  return ctx;
}

std::vector<double> switch_peaks(const Trajectory& traj, int period) {
  std::vector<double> out;
  if (period < 1) return out;
  const int n = traj.steps();
  for (int s = period; s < n; s += period) {
    double peak = -INFINITY;
    for (int i = s; i < std::min(s + period, n); ++i) peak = std::max(peak, traj.loss[static_cast<size_t>(i)]);
    out.push_back(peak);
  }
  return out;
}

std::vector<double> switch_excess(const Trajectory& traj, int period, const std::vector<TaskMoments>& tasks) {
  std::vector<double> out = switch_peaks(traj, period);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= optimal_loss(tasks[(k + 1) % tasks.size()]);
  return out;
}

namespace {

Mat residual_cov(const TaskMoments& t) {
  const Eigen::CompleteOrthogonalDecomposition<Mat> cod(t.sigma_x);
  return t.sigma_y - t.sigma_xy.transpose() * cod.solve(t.sigma_xy);
}

}  // namespace

double optimal_loss(const TaskMoments& task) {
  return 0.5 * residual_cov(task).trace();
}

Vec output_residuals(const TaskMoments& task) {
  return 0.5 * residual_cov(task).diagonal();
}

std::vector<int> difficulty_order(const std::vector<TaskMoments>& tasks) {
  std::vector<double> loss;
  for (const auto& t : tasks) loss.push_back(optimal_loss(t));
  std::vector<int> idx(tasks.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return loss[static_cast<size_t>(a)] < loss[static_cast<size_t>(b)]; });
  return idx;
}

std::vector<int> class_difficulty_order(const TaskMoments& task) {
  const Vec r = output_residuals(task);
  std::vector<int> idx(static_cast<size_t>(r.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return r(a) < r(b); });
  return idx;
}

std::vector<std::vector<int>> export_class_schedule(const ControlSchedule& phi, int batch,
                                                    std::vector<int>* fallback_steps) {
  if (batch < 1) throw InvalidParameter("batch must be >= 1");
  if (phi.kind != ControlKind::category_series) throw InvalidParameter("class schedule needs a category control");
  const int classes = phi.per_step();
  if (classes < 1) throw InvalidParameter("category control has no classes");
  std::vector<std::vector<int>> out;
  std::vector<double> real(static_cast<size_t>(classes));
  for (int i = 0; i < phi.steps(); ++i) {
    const auto row = phi.at(i);
    double total = 0.0;
    for (double v : row) {
      if (v < 0.0) throw InvalidParameter("category engagement must be non-negative");
      total += v;
    }
    std::vector<int> counts(static_cast<size_t>(classes), 0);
    int assigned = 0;
    for (int c = 0; c < classes; ++c) {
      const double share = total > 0.0 ? row[static_cast<size_t>(c)] / total : 1.0 / classes;
      real[static_cast<size_t>(c)] = share * batch;
      counts[static_cast<size_t>(c)] = static_cast<int>(std::floor(real[static_cast<size_t>(c)]));
      assigned += counts[static_cast<size_t>(c)];
    }
    if (total <= 0.0 && fallback_steps) fallback_steps->push_back(i);
    std::vector<int> order(static_cast<size_t>(classes));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const double ra = real[static_cast<size_t>(a)] - counts[static_cast<size_t>(a)];
      const double rb = real[static_cast<size_t>(b)] - counts[static_cast<size_t>(b)];
      return ra > rb;
    });
    for (int k = 0; assigned < batch; ++k, ++assigned) ++counts[static_cast<size_t>(order[static_cast<size_t>(k % classes)])];
    out.push_back(std::move(counts));
  }
  return out;
}

std::string class_schedule_csv(const std::vector<std::vector<int>>& counts) {
  std::ostringstream os;
  os << "step";
  const std::size_t classes = counts.empty() ? 0 : counts.front().size();
  for (std::size_t c = 0; c < classes; ++c) os << ",class_" << c;
  os << '\n';
  for (std::size_t i = 0; i < counts.size(); ++i) {
    os << i;
    for (int v : counts[i]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

std::vector<std::pair<double, double>> detect_plateaus(const std::vector<double>& loss, double dt, double frac,
                                                       double min_frac) {
  std::vector<std::pair<double, double>> out;
  const int n = static_cast<int>(loss.size()) - 1;
  if (n < 1) return out;
  std::vector<double> d(static_cast<size_t>(n));
  double mx = 0.0;
  for (int i = 0; i < n; ++i) {
    d[static_cast<size_t>(i)] = std::abs(loss[static_cast<size_t>(i) + 1] - loss[static_cast<size_t>(i)]) / dt;
    mx = std::max(mx, d[static_cast<size_t>(i)]);
  }
  if (mx == 0.0) {
    out.emplace_back(0.0, n * dt);
    return out;
  }
  const int min_len = std::max(1, static_cast<int>(std::ceil(min_frac * n)));
  int run = 0;
  for (int i = 0; i <= n; ++i) {
    if (i < n && d[static_cast<size_t>(i)] < frac * mx) {
      ++run;
      continue;
    }
    if (run >= min_len) out.emplace_back((i - run) * dt, i * dt);
    run = 0;
  }
  return out;
}

double time_to_threshold(const std::vector<double>& loss, double dt, double frac) {
  if (loss.empty()) return -1.0;
  const double target = frac * loss.front();
  for (std::size_t i = 0; i < loss.size(); ++i)
    if (loss[i] < target) return static_cast<double>(i) * dt;
  return -1.0;
}

double total_effort(const ControlSchedule& control, double dt) {
  if (control.kind == ControlKind::init_weights) return 0.0;
  double e = 0.0;
  for (int s = 0; s < control.segments(); ++s) e += control.values.row(s).norm() * control.segment * dt;
  return e;
}

double loss_integral(const Trajectory& traj) {
  double s = 0.0;
  for (int i = 0; i < traj.steps(); ++i) s += traj.loss[static_cast<size_t>(i)] * traj.dt;
  return s;
}

// ---------------------------------------------------------------- runs

namespace {

DynamicsKind dynamics_for(Scenario s) {
  switch (s) {
    case Scenario::single_neuron_effort:
    case Scenario::sgd_validation: return DynamicsKind::single_neuron;
    case Scenario::effort_allocation:
    case Scenario::task_switch: return DynamicsKind::gain_mod;
    case Scenario::task_engagement: return DynamicsKind::engagement;
    case Scenario::category_engagement:
    case Scenario::class_proportion: return DynamicsKind::category_engagement;
    case Scenario::maml_multistep: return DynamicsKind::two_layer_baseline;
    case Scenario::lr_bilevel: return DynamicsKind::lr_mod;
    case Scenario::nonlinear_approx: return DynamicsKind::nonlinear_taylor;
  }
  return DynamicsKind::two_layer_baseline;
}

std::optional<NeuronBasis> basis_for(const std::string& name, int in, int hid, int out) {
  if (name == "none") return std::nullopt;
  if (name == "rows1") return NeuronBasis{BasisAxis::rows, BasisLayer::first, hid, in};
  if (name == "cols1") return NeuronBasis{BasisAxis::cols, BasisLayer::first, hid, in};
  if (name == "rows2") return NeuronBasis{BasisAxis::rows, BasisLayer::second, out, hid};
  if (name == "cols2") return NeuronBasis{BasisAxis::cols, BasisLayer::second, out, hid};
  throw ConfigError("unknown basis: " + name);
}

}  // namespace

ScenarioProblem build_problem(const RunConfig& rc) {
  if (rc.scenario == Scenario::maml_multistep)
    throw UnsupportedOperation("maml_multistep optimizes initial weights over several problems");
  ScenarioProblem s;
  s.tasks = rc.task.build();
  s.value = rc.value;
  DynamicsSpec spec;
  spec.kind = dynamics_for(rc.scenario);
  spec.tau_w = rc.tau_w;
  spec.lambda = rc.lambda;
  spec.dt = rc.dt;
  spec.steps = rc.steps;
  try {
    spec.nonlinearity = Nonlinearity::from_name(rc.nonlinearity);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  TaskContext ctx;
  switch (rc.scenario) {
    case Scenario::task_switch:
      ctx = task_switch_schedule(s.tasks, rc.switch_period, rc.steps);
      break;
    case Scenario::task_engagement:
      if (s.tasks.size() < 2) throw ConfigError("task engagement needs at least two tasks");
      s.blocks = compose_block_tasks(s.tasks);
      ctx = TaskContext::engagement(*s.blocks);
      break;
    default:
      if (s.tasks.size() != 1 && rc.scenario != Scenario::maml_multistep)
        throw ConfigError(to_string(rc.scenario) + " uses exactly one task");
      ctx = TaskContext::single(s.tasks.front());
  }

  const int in = ctx.input_dim(), out = ctx.output_dim(), hid = rc.hidden;
  if (spec.kind == DynamicsKind::single_neuron) {
    if (in != 1 || out != 1) throw ConfigError("the single neuron needs a 1-in 1-out task");
    spec.init = NetState::scalar(rc.init_w);
  } else {
    spec.init = random_init(in, hid, out, rc.init_std, rc.seed);
  }

  ControlKind kind = ControlKind::scalar_series;
  std::vector<int> dims = {1};
  switch (spec.kind) {
    case DynamicsKind::gain_mod:
    case DynamicsKind::nonlinear_taylor:
      spec.basis = basis_for(rc.basis, in, hid, out);
      if (spec.basis) {
        kind = ControlKind::basis_coeff_series;
        dims = {spec.basis->basis_size()};
      } else {
        kind = ControlKind::matrix_pair_series;
        dims = {hid, in, out, hid};
      }
      break;
    case DynamicsKind::engagement:
      kind = ControlKind::engagement_series;
      dims = {static_cast<int>(s.tasks.size())};
      break;
    case DynamicsKind::category_engagement:
      kind = ControlKind::category_series;
      dims = {out};
      break;
    default:
      break;
  }
  if (rc.basis != "none" && !spec.basis) throw ConfigError("dynamics.basis applies to gain control only");
  if (s.value.cost.kind == CostKind::fixed_norm && s.value.cost.Psi <= 0.0)
    s.value.cost.Psi = static_cast<double>(per_step_size(kind, dims));

  try {
    spec.validate();
    s.problem = std::make_unique<Problem>(spec, ctx);
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  s.neutral = zeros_like(kind, dims, rc.steps, rc.segment);
  s.neutral.bounds = rc.bounds;
  check_cost_kind(s.value.cost, kind);
  return s;
}

namespace {

void fill_common(RunResult& r, const ScenarioProblem& s, const RunConfig& rc) {
  annotate_trajectory(r.baseline, s.neutral, s.value);
  annotate_trajectory(r.controlled, r.control, s.value);
  r.scalars["V_baseline"] = r.V_baseline;
  r.scalars["V_control"] = r.V_control;
  r.scalars["effort"] = total_effort(r.control, rc.dt);
  r.scalars["loss_integral_baseline"] = loss_integral(r.baseline);
  r.scalars["loss_integral_control"] = loss_integral(r.controlled);
  r.scalars["final_loss_baseline"] = r.baseline.loss.back();
  r.scalars["final_loss_control"] = r.controlled.loss.back();
  r.scalars["time_to_threshold_baseline"] = time_to_threshold(r.baseline.loss, rc.dt, rc.threshold);
  r.scalars["time_to_threshold_control"] = time_to_threshold(r.controlled.loss, rc.dt, rc.threshold);
  double ms = 0.0;
  for (const auto& row : r.trace.rows) ms += row.ms;
  r.scalars["optimizer_ms"] = ms;
}

RunResult run_controlled(const RunConfig& rc) {
  const ScenarioProblem s = build_problem(rc);
  const Problem& p = *s.problem;
  RunResult r;
  r.scenario = rc.scenario;
  r.config = rc.config;
  r.V_baseline = evaluate_value(p, s.neutral, s.value);
  OptimizerSpec opt = rc.opt;
  const OptResult o = optimize(p, s.value, opt, s.neutral);
  r.control = o.control;
  r.trace = o.trace;
  r.V_control = o.value;
  r.baseline = integrate(p, s.neutral);
  r.controlled = integrate(p, r.control);
  fill_common(r, s, rc);

  const double dt = rc.dt;
  switch (rc.scenario) {
    case Scenario::single_neuron_effort: {
      const int q = rc.steps / 4;
      double first = 0.0, last = 0.0;
      for (int i = 0; i < q; ++i) {
        first += r.control.at(i)[0];
        last += r.control.at(rc.steps - 1 - i)[0];
      }
      r.scalars["mean_g_first_quarter"] = q > 0 ? first / q : 0.0;
      r.scalars["mean_g_last_quarter"] = q > 0 ? last / q : 0.0;
      break;
    }
    case Scenario::task_switch: {
      r.series["switch_peaks_baseline"] = switch_peaks(r.baseline, rc.switch_period);
      r.series["switch_peaks_control"] = switch_peaks(r.controlled, rc.switch_period);
      r.series["switch_excess_baseline"] = switch_excess(r.baseline, rc.switch_period, s.tasks);
      r.series["switch_excess_control"] = switch_excess(r.controlled, rc.switch_period, s.tasks);
      std::vector<double> floors;
      for (const auto& t : s.tasks) floors.push_back(optimal_loss(t));
      r.series["task_optimal_loss"] = floors;
      break;
    }
    case Scenario::task_engagement: {
      std::vector<double> peaks, means, order;
      for (int tau = 0; tau < r.control.per_step(); ++tau) {
        int best = 0;
        double sum = 0.0;
        for (int i = 0; i < rc.steps; ++i) {
          const double v = r.control.at(i)[static_cast<size_t>(tau)];
          sum += v;
          if (v > r.control.at(best)[static_cast<size_t>(tau)]) best = i;
        }
        peaks.push_back(best * dt);
        means.push_back(sum / rc.steps);
      }
      for (int k : difficulty_order(s.tasks)) order.push_back(k);
      bool ordered = true;
      for (std::size_t k = 1; k < order.size(); ++k)
        ordered = ordered && peaks[static_cast<size_t>(order[k - 1])] < peaks[static_cast<size_t>(order[k])];
      std::vector<double> opt_loss;
      for (const auto& t : s.tasks) opt_loss.push_back(optimal_loss(t));
      r.series["psi_peak_time"] = peaks;
      r.series["psi_mean"] = means;
      r.series["difficulty_order"] = order;
      r.series["task_optimal_loss"] = opt_loss;
      r.scalars["peaks_ordered_easiest_first"] = ordered ? 1.0 : 0.0;
      r.scalars["min_mean_psi"] = *std::min_element(means.begin(), means.end());
      break;
    }
    case Scenario::category_engagement:
    case Scenario::class_proportion: {
      std::vector<double> means, order;
      for (int c = 0; c < r.control.per_step(); ++c) {
        double sum = 0.0;
        for (int i = 0; i < rc.steps; ++i) sum += r.control.at(i)[static_cast<size_t>(c)];
        means.push_back(sum / rc.steps);
      }
      for (int k : class_difficulty_order(s.tasks.front())) order.push_back(k);
      r.series["phi_mean"] = means;
      r.series["class_difficulty_order"] = order;
      if (rc.scenario == Scenario::class_proportion) {
        std::vector<int> fallback;
        const auto counts = export_class_schedule(coarse_to_fine(r.control), rc.class_batch, &fallback);
        bool exact = true;
        for (const auto& row : counts) exact = exact && std::accumulate(row.begin(), row.end(), 0) == rc.class_batch;
        r.files["class_counts.csv"] = class_schedule_csv(counts);
        r.scalars["class_counts_exact"] = exact ? 1.0 : 0.0;
        r.scalars["class_fallback_steps"] = static_cast<double>(fallback.size());
      }
      break;
    }
    case Scenario::lr_bilevel: {
      const auto plateaus = detect_plateaus(r.baseline.loss, dt);
      std::vector<double> starts, ends;
      for (const auto& [a, b] : plateaus) {
        starts.push_back(a);
        ends.push_back(b);
      }
      r.scalars["plateaus_baseline"] = static_cast<double>(plateaus.size());
      r.series["plateau_start"] = starts;
      r.series["plateau_end"] = ends;
      const double tb = r.scalars["time_to_threshold_baseline"], tc = r.scalars["time_to_threshold_control"];
      if (tb > 0.0 && tc >= 0.0) r.scalars["threshold_time_reduction"] = 1.0 - tc / tb;
      break;
    }
    case Scenario::nonlinear_approx: {
      SgdOptions so;
      so.batch_size = rc.sgd_batch;
      so.eval_samples = rc.sgd_eval;
      so.eval_seed = rc.seed + 12345;
      std::vector<double> cum_b, cum_c, gap;
      const int window = std::max(1, rc.steps / 5);
      for (int k = 0; k < rc.sgd_seeds; ++k) {
        so.seed = rc.seed * 1000 + static_cast<std::uint64_t>(k);
        const Trajectory sb = simulate_sgd(p, s.neutral, so);
        const Trajectory sc = simulate_sgd(p, r.control, so);
        cum_b.push_back(loss_integral(sb));
        cum_c.push_back(loss_integral(sc));
        double g = 0.0;
        for (int i = 0; i <= window; ++i) {
          const auto& a = r.baseline.states[static_cast<size_t>(i)];
          const auto& b = sb.states[static_cast<size_t>(i)];
          g += (a.w1 - b.w1).norm() + (a.w2 - b.w2).norm();
        }
        gap.push_back(g / (window + 1));
        if (k == 0) {
          r.files["sgd_baseline.csv"] = trajectory_csv(sb);
          r.files["sgd_controlled.csv"] = trajectory_csv(sc);
        }
      }
      auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
      r.scalars["sgd_loss_integral_baseline"] = mean(cum_b);
      r.scalars["sgd_loss_integral_control"] = mean(cum_c);
      r.scalars["early_weight_gap"] = mean(gap);
      break;
    }
    default:
      break;
  }
  return r;
}

RunResult run_sgd_validation(const RunConfig& rc) {
  const ScenarioProblem s = build_problem(rc);
  const Problem& p = *s.problem;
  RunResult r;
  r.scenario = rc.scenario;
  r.config = rc.config;
  r.V_baseline = evaluate_value(p, s.neutral, s.value);
  const OptResult o = optimize(p, s.value, rc.opt, s.neutral);
  r.control = o.control;
  r.trace = o.trace;
  r.V_control = o.value;
  r.baseline = integrate(p, s.neutral);
  r.controlled = integrate(p, r.control);
  fill_common(r, s, rc);

  const int n = rc.steps;
  std::vector<std::vector<double>> runs;
  for (int k = 0; k < rc.sgd_seeds; ++k) {
    SgdOptions so;
    so.batch_size = rc.sgd_batch;
    so.seed = rc.seed * 1000 + static_cast<std::uint64_t>(k);
    so.eval_samples = rc.sgd_eval;
    runs.push_back(simulate_sgd(p, r.control, so).loss);
  }
  std::vector<double> mean(static_cast<size_t>(n) + 1, 0.0), sd(static_cast<size_t>(n) + 1, 0.0);
  for (int i = 0; i <= n; ++i) {
    const auto k = static_cast<size_t>(i);
    for (const auto& l : runs) mean[k] += l[k] / runs.size();
    for (const auto& l : runs) sd[k] += (l[k] - mean[k]) * (l[k] - mean[k]);
    sd[k] = runs.size() > 1 ? std::sqrt(sd[k] / (runs.size() - 1)) : 0.0;
  }
  double max_z = 0.0;
  int checked = 0, inside = 0;
  std::ostringstream csv;
  csv << "step,time,ode_loss,sgd_mean,sgd_sd\n";
  for (int i = 0; i <= n; i += rc.sgd_every) {
    const auto k = static_cast<size_t>(i);
    const double diff = std::abs(r.controlled.loss[k] - mean[k]);
    ++checked;
    if (diff <= 3.0 * sd[k] + 1e-12) ++inside;
    if (sd[k] > 0.0) max_z = std::max(max_z, diff / sd[k]);
    csv << i << ',' << fmt_double(i * rc.dt) << ',' << fmt_double(r.controlled.loss[k]) << ','
        << fmt_double(mean[k]) << ',' << fmt_double(sd[k]) << '\n';
  }
  r.files["sgd_comparison.csv"] = csv.str();
  r.scalars["sgd_max_z"] = max_z;
  r.scalars["sgd_points_checked"] = checked;
  r.scalars["sgd_points_within_3sd"] = inside;
  return r;
}

RunResult run_maml(const RunConfig& rc) {
  if (rc.steps_ahead.empty()) throw ConfigError("maml.steps_ahead is empty");
  if (rc.value.gamma != 1.0 || rc.value.eta != 1.0 || rc.value.cost.kind != CostKind::none)
    throw ConfigError("maml_multistep needs gamma = 1, eta = 1 and cost = none");
  const std::vector<TaskMoments> tasks = rc.task.build();
  const int in = tasks.front().input_dim, out = tasks.front().output_dim;
  for (const auto& t : tasks)
    if (t.input_dim != in || t.output_dim != out) throw ConfigError("MAML tasks must share dimensions");
  DynamicsSpec base;
  base.kind = DynamicsKind::two_layer_baseline;
  base.tau_w = rc.tau_w;
  base.lambda = rc.lambda;
  base.dt = rc.dt;
  base.steps = 1;
  base.init = random_init(in, rc.hidden, out, rc.init_std, rc.seed);

  RunResult r;
  r.scenario = rc.scenario;
  r.config = rc.config;
  const ControlSchedule w0 = init_weights_control(base.init);
  const auto eval_problems = maml_problems(base, tasks, rc.eval_steps);
  std::vector<double> eval_loss, objective_values;
  const int n_max = *std::max_element(rc.steps_ahead.begin(), rc.steps_ahead.end());
  for (int n : rc.steps_ahead) {
    const auto problems = maml_problems(base, tasks, n);
    const OptResult o =
        ascend([&](const ControlSchedule& c) { return maml_value_grad(problems, c, rc.value); }, rc.opt, w0);
    eval_loss.push_back(-maml_objective(eval_problems, o.control, rc.value));
    objective_values.push_back(o.value);
    if (n == n_max && r.trace.rows.empty()) {
      r.V_baseline = maml_objective(problems, w0, rc.value);
      r.V_control = o.value;
      r.trace = o.trace;
      r.control = o.control;
    }
  }
  std::vector<double> sa(rc.steps_ahead.begin(), rc.steps_ahead.end());
  r.series["steps_ahead"] = sa;
  r.series["eval_cumulative_loss"] = eval_loss;
  r.series["objective"] = objective_values;
  r.scalars["eval_cumulative_loss_init"] = -maml_objective(eval_problems, w0, rc.value);
  r.scalars["V_baseline"] = r.V_baseline;
  r.scalars["V_control"] = r.V_control;

  DynamicsSpec spec = base;
  spec.steps = rc.eval_steps;
  const Problem first(spec, TaskContext::single(tasks.front()));
  r.baseline = integrate(first, no_control(rc.eval_steps));
  spec.init = init_weights_state(r.control);
  const Problem tuned(spec, TaskContext::single(tasks.front()));
  r.controlled = integrate(tuned, no_control(rc.eval_steps));
  return r;
}

}  // namespace

RunResult run(const RunConfig& rc) {
  switch (rc.scenario) {
    case Scenario::maml_multistep: return run_maml(rc);
    case Scenario::sgd_validation: return run_sgd_validation(rc);
    default: return run_controlled(rc);
  }
}

RunResult run(const Config& cfg) {
  return run(make_run_config(cfg));
}

// ---------------------------------------------------------------- output

nlohmann::json RunResult::to_json() const {
  nlohmann::json j;
  j["scenario"] = to_string(scenario);
  j["V_baseline"] = V_baseline;
  j["V_control"] = V_control;
  j["iterations"] = trace.rows.empty() ? 0 : trace.rows.back().iter;
  nlohmann::json sc = nlohmann::json::object();
  for (const auto& [k, v] : scalars) sc[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  j["scalars"] = sc;
  nlohmann::json se = nlohmann::json::object();
  for (const auto& [k, v] : series) se[k] = v;
  j["series"] = se;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [sec, keys] : config.sections()) cfg[sec] = keys;
  j["config"] = cfg;
  return j;
}

namespace {

std::string every_nth_row(const std::string& csv, int stride) {
  if (stride <= 1) return csv;
  std::istringstream in(csv);
  std::string line, out, last;
  int row = -1;
  bool last_kept = true;
  while (std::getline(in, line)) {
    if (row < 0 || row % stride == 0) {
      out += line + '\n';
      last_kept = true;
    } else {
      last = line;
      last_kept = false;
    }
    ++row;
  }
  if (!last_kept) out += last + '\n';
  return out;
}

}  // namespace

void write_result(const RunResult& r, const std::string& dir, bool force, int csv_stride) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::exists(dir, ec) && !force) throw IoError("output directory exists (use --force): " + dir);
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  const fs::path d(dir);
  write_text_file((d / "result.json").string(), dump_json(r.to_json()) + "\n");
  write_text_file((d / "config.cfg").string(), r.config.serialize());
  write_text_file((d / "baseline.csv").string(), every_nth_row(trajectory_csv(r.baseline), csv_stride));
  write_text_file((d / "controlled.csv").string(), every_nth_row(trajectory_csv(r.controlled), csv_stride));
  write_text_file((d / "schedule.json").string(), dump_json(schedule_to_json(r.control)) + "\n");
  write_text_file((d / "trace.csv").string(), trace_csv(r.trace));
  for (const auto& [name, text] : r.files) write_text_file((d / name).string(), text);
}

std::vector<SweepPoint> sweep(const Config& base, const std::string& param, const std::vector<std::string>& values,
                              int threads) {
  std::vector<SweepPoint> out(values.size());
  parallel_for(static_cast<int>(values.size()), threads, [&](int i) {
    auto& pt = out[static_cast<size_t>(i)];
    pt.value = values[static_cast<size_t>(i)];
    try {
      Config c = base;
      c.set_path(param, pt.value);
      pt.result = run(c);
    } catch (const std::exception& e) {
      pt.error = e.what();
    }
  });
  return out;
}

}  // namespace effort
