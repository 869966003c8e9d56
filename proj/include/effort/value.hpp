#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "effort/control.hpp"
#include "effort/dynamics.hpp"

namespace effort {

enum class CostKind { quadratic, exp_frobenius, anchored_norm, fixed_norm, none };

std::string to_string(CostKind kind);
CostKind cost_kind_from_string(const std::string& s);

struct CostSpec {
  CostKind kind = CostKind::none;
  double beta = 0.0;
  double mu_psi = 1.0;  // anchored_norm
  double Psi = 1.0;     // fixed_norm
  double offset = 0.0;  // quadratic: beta * sum (g - offset)^2

  void validate() const;
};

struct ValueSpec {
  double gamma = 1.0;
  double eta = 1.0;
  CostSpec cost;

  void validate() const;
};

// Cost of one step's control. An empty control (uncontrolled run) costs nothing.
double cost(std::span<const double> g, const CostSpec& spec);
// Adds scale * dC/dg to out.
void cost_grad(std::span<const double> g, const CostSpec& spec, double scale, std::span<double> out);
// Throws ConfigError when a cost kind makes no sense for a control kind.
void check_cost_kind(const CostSpec& cost, ControlKind kind);

// gamma^t as exp(t ln gamma).
double discount(double gamma, double t);

// V = sum_i loss[i] * L(t_i) + sum_i cost[i] * C(g_i). loss has N + 1 entries
// (index N is the loss after the last step), cost has N.
struct ObjectiveWeights {
  std::vector<double> loss;
  std::vector<double> cost;
};

// Left Riemann sum of dt gamma^t_i (eta P(t_i) - C(g_i)), P = -L.
ObjectiveWeights value_weights(const DynamicsSpec& spec, const ValueSpec& vspec);

double value(const Trajectory& traj, const ControlSchedule& control, const ValueSpec& vspec);

struct ValueGrad {
  double value = 0.0;
  ControlSchedule grad;  // same shape as the control
  Trajectory traj;
};

double objective(const Problem& problem, const ControlSchedule& control, const ObjectiveWeights& weights,
                 const CostSpec& cost, Trajectory* traj_out = nullptr);
// One forward rollout plus one reverse sweep. With stride > 1 only every
// stride-th state is kept and the rest are recomputed during the sweep.
ValueGrad objective_grad(const Problem& problem, const ControlSchedule& control, const ObjectiveWeights& weights,
                         const CostSpec& cost, int stride = 1);

double evaluate_value(const Problem& problem, const ControlSchedule& control, const ValueSpec& vspec);
ValueGrad grad_value(const Problem& problem, const ControlSchedule& control, const ValueSpec& vspec,
                     int stride = 1);

// Fills reward (-eta L) and cost columns.
void annotate_trajectory(Trajectory& traj, const ControlSchedule& control, const ValueSpec& vspec);

struct FdReport {
  double max_rel = 0.0;
  double mean_rel = 0.0;
  std::vector<int> coords;  // flat indices into the control values
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// Central differences of V on `coords` randomly chosen control entries (all
// entries when coords <= 0 or exceeds the count). Relative error per entry is
// |a - n| / max(|a|, |n|, abs_floor).
FdReport fd_check(const Problem& problem, const ControlSchedule& control, const ValueSpec& vspec, int coords,
                  double h, std::uint64_t seed = 0, double abs_floor = 1e-7);
FdReport fd_check_objective(const Problem& problem, const ControlSchedule& control, const ObjectiveWeights& weights,
                            const CostSpec& cost, int coords, double h, std::uint64_t seed = 0,
                            double abs_floor = 1e-7);

}  // namespace effort
