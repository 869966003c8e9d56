#include "effort/optimizer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "effort/json_util.hpp"

namespace effort {

std::string to_string(UpdateRule rule) {
  return rule == UpdateRule::plain ? "plain" : "adaptive_moments";
}

UpdateRule update_rule_from_string(const std::string& s) {
  if (s == "plain") return UpdateRule::plain;
  if (s == "adaptive_moments" || s == "adam") return UpdateRule::adaptive_moments;
  throw ConfigError("unknown update rule: " + s);
}

void OptimizerSpec::validate() const {
  if (!(alpha_g >= 0.0) || !std::isfinite(alpha_g)) throw InvalidParameter("alpha_g must be non-negative");
  if (iters < 0) throw InvalidParameter("iters must be >= 0");
  if (max_halvings < 0) throw InvalidParameter("max_halvings must be >= 0");
  if (checkpoint_stride < 1) throw InvalidParameter("checkpoint_stride must be >= 1");
}

std::string trace_csv(const OptTrace& trace) {
  std::ostringstream os;
  os << "iter,V,grad_norm,alpha_used,ms\n";
  for (const auto& r : trace.rows)
    os << r.iter << ',' << fmt_double(r.value) << ',' << fmt_double(r.grad_norm) << ',' << fmt_double(r.alpha_used)
       << ',' << fmt_double(r.ms) << '\n';
  return os.str();
}

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

OptResult ascend(const GradientFn& fn, const OptimizerSpec& opt, const ControlSchedule& init) {
  opt.validate();
  OptResult res;
  res.control = init;
  auto t0 = std::chrono::steady_clock::now();
  ValueAndGrad cur;
  try {
    cur = fn(res.control);
  } catch (const Diverged& e) {
    throw OptimizerDiverged(e.what(), e.step(), 0, init);
  }
  res.trace.rows.push_back({0, cur.value, cur.grad.values.norm(), 0.0, ms_since(t0)});

  RowMat m1, m2;
  if (opt.update_rule == UpdateRule::adaptive_moments) {
    m1 = RowMat::Zero(init.values.rows(), init.values.cols());
    m2 = m1;
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (int k = 1; k <= opt.iters; ++k) {
    t0 = std::chrono::steady_clock::now();
    RowMat dir = cur.grad.values;
    if (opt.update_rule == UpdateRule::adaptive_moments) {
      m1 = b1 * m1 + (1.0 - b1) * dir;
      m2 = b2 * m2 + (1.0 - b2) * dir.cwiseProduct(dir);
      const double c1 = 1.0 - std::pow(b1, k), c2 = 1.0 - std::pow(b2, k);
      dir = (m1 / c1).array() / ((m2 / c2).array().sqrt() + eps);
    }
    double alpha = opt.alpha_g;
    double used = 0.0;
    const int tries = opt.backtracking ? opt.max_halvings + 1 : 1;
    for (int h = 0; h < tries; ++h, alpha *= 0.5) {
      ControlSchedule cand = res.control;
      cand.values += alpha * dir;
      project_in_place(cand);
      ValueAndGrad next;
      try {
        next = fn(cand);
      } catch (const Diverged& e) {
        if (!opt.backtracking) throw OptimizerDiverged(e.what(), e.step(), k, res.control);
        continue;
      }
      if (!opt.backtracking || next.value >= cur.value) {
        res.control = std::move(cand);
        cur = std::move(next);
        used = alpha;
        break;
      }
    }
    res.trace.rows.push_back({k, cur.value, cur.grad.values.norm(), used, ms_since(t0)});
  }
  res.value = cur.value;
  return res;
}

OptResult optimize(const Problem& problem, const ValueSpec& vspec, const OptimizerSpec& opt,
                   const ControlSchedule& init) {
  check_cost_kind(vspec.cost, init.kind);
  const ObjectiveWeights weights = value_weights(problem.spec(), vspec);
  const int stride = opt.checkpoint_stride;
  auto fn = [&](const ControlSchedule& c) {
    ValueGrad vg = objective_grad(problem, c, weights, vspec.cost, stride);
    return ValueAndGrad{vg.value, std::move(vg.grad)};
  };
  return ascend(fn, opt, init);
}

std::vector<Problem> maml_problems(const DynamicsSpec& base, const std::vector<TaskMoments>& tasks, int steps_ahead) {
  if (steps_ahead < 1) throw InvalidParameter("steps_ahead must be >= 1");
  if (tasks.empty()) throw InvalidParameter("MAML needs at least one task");
  std::vector<Problem> out;
  DynamicsSpec spec = base;
  spec.steps = steps_ahead;
  for (const auto& t : tasks) out.emplace_back(spec, TaskContext::single(t));
  return out;
}

namespace {

void check_maml(const std::vector<Problem>& problems, const ControlSchedule& w0, const ValueSpec& vspec,
                bool strict) {
  if (problems.empty()) throw InvalidParameter("MAML needs at least one task");
  if (w0.kind != ControlKind::init_weights) throw ConfigError("MAML optimizes initial weights");
  if (strict && (vspec.eta != 1.0 || vspec.gamma != 1.0 || vspec.cost.kind != CostKind::none))
    throw ConfigError("strict MAML mode needs eta = 1, gamma = 1 and no cost");
}

ObjectiveWeights maml_weights(const Problem& p) {
  ObjectiveWeights w;
  const int n = p.spec().steps;
  w.loss.assign(static_cast<size_t>(n) + 1, -1.0);
  w.loss[0] = 0.0;
  w.cost.assign(static_cast<size_t>(n), 0.0);
  return w;
}

}  // namespace

double maml_objective(const std::vector<Problem>& problems, const ControlSchedule& w0, const ValueSpec& vspec,
                      bool strict) {
  check_maml(problems, w0, vspec, strict);
  double v = 0.0;
  for (const auto& p : problems) v += objective(p, w0, maml_weights(p), CostSpec{});
  return v;
}

ValueAndGrad maml_value_grad(const std::vector<Problem>& problems, const ControlSchedule& w0,
                             const ValueSpec& vspec, bool strict) {
  check_maml(problems, w0, vspec, strict);
  ValueAndGrad out;
  out.grad = w0;
  out.grad.values.setZero();
  for (const auto& p : problems) {
    const ValueGrad vg = objective_grad(p, w0, maml_weights(p), CostSpec{});
    out.value += vg.value;
    out.grad.values += vg.grad.values;
  }
  return out;
}

int default_threads() {
  if (const char* env = std::getenv("LE_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace effort
