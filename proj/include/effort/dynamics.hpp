#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "effort/control.hpp"
#include "effort/net_state.hpp"
#include "effort/task_moments.hpp"

namespace effort {

enum class DynamicsKind {
  single_neuron,
  single_layer,
  two_layer_baseline,
  gain_mod,
  engagement,
  category_engagement,
  lr_mod,
  nonlinear_taylor,
};

std::string to_string(DynamicsKind kind);
DynamicsKind dynamics_kind_from_string(const std::string& s);

struct Nonlinearity {
  std::string name = "tanh";
  double (*f)(double) = nullptr;
  double (*df)(double) = nullptr;
  double (*ddf)(double) = nullptr;

  static Nonlinearity tanh();
  static Nonlinearity identity();
  static Nonlinearity from_name(const std::string& name);
};

struct DynamicsSpec {
  DynamicsKind kind = DynamicsKind::two_layer_baseline;
  double tau_w = 1.0;
  double lambda = 0.0;
  double dt = 0.01;
  int steps = 0;
  NetState init;
  // Gain kinds only: restrict G to whole rows/cols of one layer.
  std::optional<NeuronBasis> basis;
  Nonlinearity nonlinearity = Nonlinearity::tanh();
  // Lower limit on rho for lr_mod; values at or below it are rejected.
  double rho_min = -0.99;

  double horizon() const { return dt * steps; }
  void validate() const;
};

// Which task the network trains on at each step. Tasks alternate every
// `switch_period` steps; a period of zero keeps tasks[0] throughout.
struct TaskContext {
  std::vector<TaskMoments> tasks;
  int switch_period = 0;
  // Engagement: dataset index of every output.
  std::vector<int> output_group;

  static TaskContext single(TaskMoments task);
  static TaskContext engagement(const BlockTaskSet& blocks);
  int active(int step) const;
  int input_dim() const { return tasks.front().input_dim; }
  int output_dim() const { return tasks.front().output_dim; }
};

// Moments in the form the kernels consume.
struct StepMoments {
  Mat sx;   // I x I
  Mat syx;  // O x I, sigma_xy^T
  double tr_sy = 0.0;
  Vec mx;
  Vec my;
  Mat cx;   // sigma_x - mx mx^T
  Mat cyx;  // sigma_xy^T - my mx^T

  static StepMoments from(const TaskMoments& task);
};

// One dynamics variant. `g` is the raw per-step control; an empty span means
// the neutral control. VJPs differentiate the discrete step exactly.
class Model {
 public:
  virtual ~Model() = default;
  virtual int control_size() const = 0;
  virtual void step(const NetState& w, std::span<const double> g, const StepMoments& m,
                    NetState& out) const = 0;
  virtual double loss(const NetState& w, std::span<const double> g, const StepMoments& m) const = 0;
  // Overwrites bar_w with d<bar_next, step(w, g)>/dw and adds the g part to bar_g.
  virtual void step_vjp(const NetState& w, std::span<const double> g, const StepMoments& m,
                        const NetState& bar_next, NetState& bar_w, std::span<double> bar_g) const = 0;
  // Adds scale * dL/dw to bar_w and scale * dL/dg to bar_g.
  virtual void loss_vjp(const NetState& w, std::span<const double> g, const StepMoments& m, double scale,
                        NetState& bar_w, std::span<double> bar_g) const = 0;
};

std::unique_ptr<Model> make_model(const DynamicsSpec& spec, const TaskContext& ctx);

// Everything needed to roll the dynamics forward.
class Problem {
 public:
  Problem(DynamicsSpec spec, TaskContext ctx);

  const DynamicsSpec& spec() const { return spec_; }
  const TaskContext& context() const { return ctx_; }
  const Model& model() const { return *model_; }
  // Moments of the task active at `step`; step == steps maps to the last step's task.
  const StepMoments& moments(int step) const;
  const StepMoments& task_moments(int task) const { return moments_[static_cast<size_t>(task)]; }

 private:
  DynamicsSpec spec_;
  TaskContext ctx_;
  std::shared_ptr<const Model> model_;
  std::vector<StepMoments> moments_;
};

struct Trajectory {
  double dt = 0.0;
  int stride = 1;                 // states[k] is the state at step k * stride
  std::vector<NetState> states;   // the final state is always stored last
  std::vector<double> loss;       // N + 1
  std::vector<double> reward;     // N + 1; filled by annotate_trajectory
  std::vector<double> cost;       // N + 1
  std::vector<double> w1_l1, w1_l2, w2_l1, w2_l2, g_l2;  // N + 1

  int steps() const { return static_cast<int>(loss.size()) - 1; }
  const NetState& final_state() const { return states.back(); }
};

// Checks that a schedule can drive the problem's model for `steps` steps.
void check_schedule(const Problem& problem, const ControlSchedule& schedule);
// Per-step control slice (empty for init_weights or zero-width schedules).
std::span<const double> control_at(const ControlSchedule& schedule, int step);
NetState initial_state(const Problem& problem, const ControlSchedule& schedule);

// Throws Diverged when a weight is non-finite or exceeds 1e6 in magnitude.
void check_divergence(const NetState& w, int step);

Trajectory integrate(const Problem& problem, const ControlSchedule& schedule, int stride = 1);
Trajectory integrate(const DynamicsSpec& spec, const ControlSchedule& schedule, const TaskContext& ctx);

struct SgdOptions {
  int batch_size = 128;
  std::uint64_t seed = 0;
  // When positive, loss is measured on a fixed sample of this size instead of
  // the training minibatch.
  int eval_samples = 0;
  std::uint64_t eval_seed = 12345;
};

// Minibatch SGD with learning rate dt / tau_w under the same control. Linear
// kinds reuse the kernels with empirical batch moments; nonlinear_taylor runs
// the true nonlinear network.
Trajectory simulate_sgd(const Problem& problem, const ControlSchedule& schedule, const SgdOptions& opts);

// Expected loss (with L2 term) of effective weights under the given control.
double expected_loss(const Problem& problem, const NetState& w, std::span<const double> g, int step = 0);

NetState step_single_neuron(const NetState& w, double g, const TaskMoments& task, const DynamicsSpec& spec);
NetState step_two_layer_baseline(const NetState& w, const TaskMoments& task, const DynamicsSpec& spec);
NetState step_gain_mod(const NetState& w, const Mat& g1, const Mat& g2, const TaskMoments& task,
                       const DynamicsSpec& spec);
NetState step_engagement(const NetState& w, const Vec& psi, const BlockTaskSet& blocks, const DynamicsSpec& spec);
NetState step_category_engagement(const NetState& w, const Vec& phi, const TaskMoments& task,
                                  const DynamicsSpec& spec);
NetState step_lr_mod(const NetState& w, double rho, const TaskMoments& task, const DynamicsSpec& spec);
NetState step_nonlinear_taylor(const NetState& w, const Mat& g1, const Mat& g2, const TaskMoments& task,
                               const DynamicsSpec& spec);

// Exact solution of the single-neuron ODE for a per-step g schedule
// (piecewise constant on the dt grid). 0 <= t <= steps * dt.
double closed_form_single_neuron(const ControlSchedule& g, const TaskMoments& task, const DynamicsSpec& spec,
                                 double t);

struct ClosedFormResult {
  Mat w;
  bool ill_conditioned = false;
};

// Exact solution of the single-layer ODE W' = ((S - (G~ o W) Sx) o G~ - lambda W) / tau
// via matrix exponentials of the vectorized system. G holds O x I gains per step.
ClosedFormResult closed_form_single_layer(const ControlSchedule& g, const TaskMoments& task,
                                          const DynamicsSpec& spec, double t);

std::string trajectory_csv(const Trajectory& traj);
void write_trajectory_csv(const Trajectory& traj, const std::string& path);

}  // namespace effort
