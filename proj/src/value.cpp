#include "effort/value.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "effort/errors.hpp"

namespace effort {

std::string to_string(CostKind kind) {
  switch (kind) {
    case CostKind::quadratic: return "quadratic";
    case CostKind::exp_frobenius: return "exp_frobenius";
    case CostKind::anchored_norm: return "anchored_norm";
    case CostKind::fixed_norm: return "fixed_norm";
    case CostKind::none: return "none";
  }
  return "?";
}

CostKind cost_kind_from_string(const std::string& s) {
  for (auto k : {CostKind::quadratic, CostKind::exp_frobenius, CostKind::anchored_norm, CostKind::fixed_norm,
                 CostKind::none}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown cost kind: " + s);
}

void CostSpec::validate() const {
  if (!(beta >= 0.0)) throw InvalidParameter("cost beta must be non-negative");
  if (!std::isfinite(mu_psi) || !std::isfinite(Psi) || !std::isfinite(offset))
    throw InvalidParameter("cost parameters must be finite");
}

void ValueSpec::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidParameter("gamma must lie in (0, 1]");
  if (!(eta >= 0.0)) throw InvalidParameter("eta must be non-negative");
  cost.validate();
}

double cost(std::span<const double> g, const CostSpec& spec) {
  if (g.empty()) return 0.0;
  double s = 0.0;
  switch (spec.kind) {
    case CostKind::none: return 0.0;
    case CostKind::quadratic:
      for (double v : g) s += (v - spec.offset) * (v - spec.offset);
      return spec.beta * s;
    case CostKind::exp_frobenius:
      for (double v : g) s += v * v;
      return std::expm1(spec.beta * s);
    case CostKind::anchored_norm:
      for (double v : g) s += (spec.mu_psi - v) * (spec.mu_psi - v);
      return spec.beta * s;
    case CostKind::fixed_norm: {
      for (double v : g) s += v * v;
      const double d = s - spec.Psi;
      return spec.beta * d * d;
    }
  }
  return 0.0;
}

void cost_grad(std::span<const double> g, const CostSpec& spec, double scale, std::span<double> out) {
  if (g.empty() || spec.kind == CostKind::none) return;
  double s = 0.0;
  switch (spec.kind) {
    case CostKind::quadratic:
      for (size_t k = 0; k < g.size(); ++k) out[k] += scale * 2.0 * spec.beta * (g[k] - spec.offset);
      break;
    case CostKind::exp_frobenius: {
      for (double v : g) s += v * v;
      const double e = std::exp(spec.beta * s);
      for (size_t k = 0; k < g.size(); ++k) out[k] += scale * 2.0 * spec.beta * e * g[k];
      break;
    }
    case CostKind::anchored_norm:
      for (size_t k = 0; k < g.size(); ++k) out[k] += scale * 2.0 * spec.beta * (g[k] - spec.mu_psi);
      break;
    case CostKind::fixed_norm: {
      for (double v : g) s += v * v;
      const double d = s - spec.Psi;
      for (size_t k = 0; k < g.size(); ++k) out[k] += scale * 4.0 * spec.beta * d * g[k];
      break;
    }
    case CostKind::none: break;
  }
}

void check_cost_kind(const CostSpec& cost, ControlKind kind) {
  const bool vector_kind = kind == ControlKind::engagement_series || kind == ControlKind::category_series;
  switch (cost.kind) {
    case CostKind::none:
    case CostKind::quadratic: return;
    case CostKind::exp_frobenius:
      if (kind == ControlKind::matrix_pair_series || kind == ControlKind::basis_coeff_series ||
          kind == ControlKind::scalar_series)
        return;
      break;
    case CostKind::anchored_norm:
    case CostKind::fixed_norm:
      if (vector_kind || kind == ControlKind::scalar_series) return;
      break;
  }
  throw ConfigError("cost " + to_string(cost.kind) + " does not apply to control kind " + to_string(kind));
}

double discount(double gamma, double t) {
  if (gamma == 1.0) return 1.0;
  return std::exp(t * std::log(gamma));
}

ObjectiveWeights value_weights(const DynamicsSpec& spec, const ValueSpec& vspec) {
  vspec.validate();
  const int n = spec.steps;
  ObjectiveWeights w;
  w.loss.assign(static_cast<size_t>(n) + 1, 0.0);
  w.cost.assign(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const double d = spec.dt * discount(vspec.gamma, i * spec.dt);
    w.loss[static_cast<size_t>(i)] = -vspec.eta * d;
    w.cost[static_cast<size_t>(i)] = -d;
  }
  return w;
}

double value(const Trajectory& traj, const ControlSchedule& control, const ValueSpec& vspec) {
  vspec.validate();
  const int n = traj.steps();
  if (control.kind != ControlKind::init_weights && control.per_step() != 0 && control.steps() != n)
    throw DimensionMismatch("trajectory and control lengths differ");
  double v = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = traj.dt * discount(vspec.gamma, i * traj.dt);
    v += d * (-vspec.eta * traj.loss[static_cast<size_t>(i)] - cost(control_at(control, i), vspec.cost));
  }
  return v;
}

namespace {

void check_weights(const Problem& problem, const ObjectiveWeights& weights) {
  const auto n = static_cast<size_t>(problem.spec().steps);
  if (weights.loss.size() != n + 1 || weights.cost.size() != n)
    throw DimensionMismatch("objective weights do not match the number of steps");
}

}  // namespace

double objective(const Problem& problem, const ControlSchedule& control, const ObjectiveWeights& weights,
                 const CostSpec& cost_spec, Trajectory* traj_out) {
  check_weights(problem, weights);
  Trajectory traj = integrate(problem, control);
  double v = 0.0;
  const int n = problem.spec().steps;
  for (int i = 0; i <= n; ++i) v += weights.loss[static_cast<size_t>(i)] * traj.loss[static_cast<size_t>(i)];
  for (int i = 0; i < n; ++i)
    if (weights.cost[static_cast<size_t>(i)] != 0.0)
      v += weights.cost[static_cast<size_t>(i)] * cost(control_at(control, i), cost_spec);
  if (traj_out) *traj_out = std::move(traj);
  return v;
}

ValueGrad objective_grad(const Problem& problem, const ControlSchedule& control, const ObjectiveWeights& weights,
                         const CostSpec& cost_spec, int stride) {
  check_weights(problem, weights);
  const Model& model = problem.model();
  const int n = problem.spec().steps;
  ValueGrad out;
  out.traj = integrate(problem, control, stride);
  const Trajectory& traj = out.traj;

  double v = 0.0;
  for (int i = 0; i <= n; ++i) v += weights.loss[static_cast<size_t>(i)] * traj.loss[static_cast<size_t>(i)];
  for (int i = 0; i < n; ++i)
    if (weights.cost[static_cast<size_t>(i)] != 0.0)
      v += weights.cost[static_cast<size_t>(i)] * cost(control_at(control, i), cost_spec);
  out.value = v;

  const bool per_step = control.kind != ControlKind::init_weights && control.per_step() > 0;
  const int width = per_step ? control.per_step() : 0;
  RowMat bar_g = RowMat::Zero(per_step ? n : 0, width);
  auto bar_row = [&](int i) -> std::span<double> {
    if (!per_step) return {};
    return {bar_g.data() + static_cast<Eigen::Index>(i) * width, static_cast<size_t>(width)};
  };

  NetState bar = traj.final_state().zeros_like();
  const double last_w = weights.loss[static_cast<size_t>(n)];
  if (last_w != 0.0) {
    const auto g_last = n > 0 ? control_at(control, n - 1) : std::span<const double>{};
    model.loss_vjp(traj.final_state(), g_last, problem.moments(n), last_w, bar,
                   n > 0 ? bar_row(n - 1) : std::span<double>{});
  }

  // States of the current checkpoint block, recomputed on demand.
  std::vector<NetState> block;
  int block_start = -1;
  NetState bw;
  for (int i = n - 1; i >= 0; --i) {
    const NetState* wi = nullptr;
    if (stride == 1) {
      wi = &traj.states[static_cast<size_t>(i)];
    } else {
      const int start = (i / stride) * stride;
      if (start != block_start) {
        block.clear();
        block.push_back(traj.states[static_cast<size_t>(i / stride)]);
        for (int k = start; k < std::min(start + stride, n) - 1; ++k) {
          NetState next;
          model.step(block.back(), control_at(control, k), problem.moments(k), next);
          block.push_back(std::move(next));
        }
        block_start = start;
      }
      wi = &block[static_cast<size_t>(i - start)];
    }
    const auto g = control_at(control, i);
    model.step_vjp(*wi, g, problem.moments(i), bar, bw, bar_row(i));
    std::swap(bar, bw);
    const double lw = weights.loss[static_cast<size_t>(i)];
    if (lw != 0.0) model.loss_vjp(*wi, g, problem.moments(i), lw, bar, bar_row(i));
    const double cw = weights.cost[static_cast<size_t>(i)];
    if (cw != 0.0) cost_grad(g, cost_spec, cw, bar_row(i));
  }

  if (control.kind == ControlKind::init_weights) {
    out.grad = init_weights_control(bar);
    out.grad.bounds = control.bounds;
    return out;
  }
  out.grad = control;
  out.grad.values.setZero();
  if (per_step)
    for (int i = 0; i < n; ++i) out.grad.values.row(i / control.segment) += bar_g.row(i);
  return out;
}

double evaluate_value(const Problem& problem, const ControlSchedule& control, const ValueSpec& vspec) {
  check_cost_kind(vspec.cost, control.kind);
  return objective(problem, control, value_weights(problem.spec(), vspec), vspec.cost);
}

ValueGrad grad_value(const Problem& problem, const ControlSchedule& control, const ValueSpec& vspec, int stride) {
  check_cost_kind(vspec.cost, control.kind);
  return objective_grad(problem, control, value_weights(problem.spec(), vspec), vspec.cost, stride);
}

void annotate_trajectory(Trajectory& traj, const ControlSchedule& control, const ValueSpec& vspec) {
  const int n = traj.steps();
  traj.reward.resize(static_cast<size_t>(n) + 1);
  traj.cost.resize(static_cast<size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    const auto k = static_cast<size_t>(i);
    traj.reward[k] = -vspec.eta * traj.loss[k];
    const auto g = n > 0 ? control_at(control, std::min(i, n - 1)) : std::span<const double>{};
    traj.cost[k] = cost(g, vspec.cost);
  }
}

FdReport fd_check_objective(const Problem& problem, const ControlSchedule& control, const ObjectiveWeights& weights,
                            const CostSpec& cost_spec, int coords, double h, std::uint64_t seed, double abs_floor) {
  if (!(h > 0.0)) throw InvalidParameter("finite-difference step must be positive");
  const ValueGrad vg = objective_grad(problem, control, weights, cost_spec);
  const auto total = static_cast<int>(control.values.size());
  FdReport rep;
  std::vector<int> all(static_cast<size_t>(total));
  std::iota(all.begin(), all.end(), 0);
  if (coords <= 0 || coords >= total) {
    rep.coords = all;
  } else {
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    rep.coords.assign(all.begin(), all.begin() + coords);
    std::sort(rep.coords.begin(), rep.coords.end());
  }
  double sum = 0.0;
  for (int idx : rep.coords) {
    ControlSchedule plus = control, minus = control;
    plus.values.data()[idx] += h;
    minus.values.data()[idx] -= h;
    const double num = (objective(problem, plus, weights, cost_spec) - objective(problem, minus, weights, cost_spec)) /
                       (2.0 * h);
    const double ana = vg.grad.values.data()[idx];
    const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), abs_floor});
    rep.analytic.push_back(ana);
    rep.numeric.push_back(num);
    rep.max_rel = std::max(rep.max_rel, rel);
    sum += rel;
  }
  if (!rep.coords.empty()) rep.mean_rel = sum / static_cast<double>(rep.coords.size());
  return rep;
}

FdReport fd_check(const Problem& problem, const ControlSchedule& control, const ValueSpec& vspec, int coords,
                  double h, std::uint64_t seed, double abs_floor) {
  check_cost_kind(vspec.cost, control.kind);
  return fd_check_objective(problem, control, value_weights(problem.spec(), vspec), vspec.cost, coords, h, seed,
                            abs_floor);
}

}  // namespace effort
