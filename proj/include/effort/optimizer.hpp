#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "effort/control.hpp"
#include "effort/dynamics.hpp"
#include "effort/errors.hpp"
#include "effort/value.hpp"

namespace effort {

enum class UpdateRule { plain, adaptive_moments };

std::string to_string(UpdateRule rule);
UpdateRule update_rule_from_string(const std::string& s);

struct OptimizerSpec {
  double alpha_g = 1.0;
  int iters = 0;
  UpdateRule update_rule = UpdateRule::plain;
  bool backtracking = true;
  int max_halvings = 20;
  std::uint64_t seed = 0;
  int checkpoint_stride = 1;

  void validate() const;
};

struct TraceRow {
  int iter = 0;
  double value = 0.0;
  double grad_norm = 0.0;
  double alpha_used = 0.0;
  double ms = 0.0;
};

struct OptTrace {
  std::vector<TraceRow> rows;
};

std::string trace_csv(const OptTrace& trace);

struct OptResult {
  ControlSchedule control;
  OptTrace trace;
  double value = 0.0;
};

// A rollout diverged during optimization. Carries the last control whose
// rollout was finite.
class OptimizerDiverged : public Diverged {
 public:
  OptimizerDiverged(const std::string& what, int step, int iteration, ControlSchedule last)
      : Diverged(what, step), iteration_(iteration), last_(std::move(last)) {}
  int iteration() const { return iteration_; }
  const ControlSchedule& last_valid() const { return last_; }

 private:
  int iteration_;
  ControlSchedule last_;
};

struct ValueAndGrad {
  double value = 0.0;
  ControlSchedule grad;
};
using GradientFn = std::function<ValueAndGrad(const ControlSchedule&)>;

// Projected gradient ascent on any differentiable objective of a schedule.
// With backtracking the step halves until V does not decrease; if no step
// is accepted the iterate stays put.
OptResult ascend(const GradientFn& fn, const OptimizerSpec& opt, const ControlSchedule& init);

OptResult optimize(const Problem& problem, const ValueSpec& vspec, const OptimizerSpec& opt,
                   const ControlSchedule& init);

// One problem per task, each running `steps_ahead` inner steps from W(0).
std::vector<Problem> maml_problems(const DynamicsSpec& base, const std::vector<TaskMoments>& tasks, int steps_ahead);
// V = -sum_tau sum_{i=1..n} L_tau(t_i). In strict mode vspec must be
// eta = 1, gamma = 1 and cost none.
double maml_objective(const std::vector<Problem>& problems, const ControlSchedule& w0, const ValueSpec& vspec,
                      bool strict = true);
ValueAndGrad maml_value_grad(const std::vector<Problem>& problems, const ControlSchedule& w0,
                             const ValueSpec& vspec, bool strict = true);

// Worker count: LE_THREADS if set, else hardware concurrency (at least 1).
int default_threads();
// Runs fn(0..n-1) on up to `threads` workers; indices are claimed in order.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace effort
