#include <doctest.h>

#include <atomic>
#include <cmath>

#include "effort/errors.hpp"
#include "effort/optimizer.hpp"
#include "effort/value.hpp"
#include "support.hpp"

using namespace effort;
using testing::random_instance;

namespace {

// V(c) = -sum (c - target)^2, maximized at target.
GradientFn quadratic_bowl(const RowMat& target) {
  return [target](const ControlSchedule& c) {
    ValueAndGrad out;
    const RowMat d = c.values - target;
    out.value = -d.squaredNorm();
    out.grad = c;
    out.grad.values = -2.0 * d;
    return out;
  };
}

std::vector<TaskMoments> maml_tasks() {
  return {with_bias(correlated_gaussian_moments({3.0, 1.0, 1.0, 1.0, 0.8})),
          with_bias(correlated_gaussian_moments({-2.0, 2.0, 1.0, 1.0, 0.2}))};
}

}  // namespace

TEST_CASE("plain ascent on a bowl reaches the box-constrained optimum") {
  auto init = zeros_like(ControlKind::scalar_series, {1}, 4);
  init.bounds = {-1.0, 0.5};
  RowMat target(4, 1);
  target << 0.2, -0.3, 2.0, -4.0;
  OptimizerSpec opt;
  opt.alpha_g = 0.25;
  opt.iters = 200;
  const auto res = ascend(quadratic_bowl(target), opt, init);
  CHECK(res.control.values(0, 0) == doctest::Approx(0.2));
  CHECK(res.control.values(1, 0) == doctest::Approx(-0.3));
  CHECK(res.control.values(2, 0) == 0.5);
  CHECK(res.control.values(3, 0) == -1.0);
  CHECK(res.trace.rows.size() == 201);
}

TEST_CASE("backtracking halves an overlong step") {
  auto init = zeros_like(ControlKind::scalar_series, {1}, 1);
  RowMat target = RowMat::Constant(1, 1, 1.0);
  OptimizerSpec opt;
  opt.alpha_g = 3.0;  // steps to 6 and 3 lose value, 1.5 gains
  opt.iters = 1;
  const auto res = ascend(quadratic_bowl(target), opt, init);
  CHECK(res.trace.rows[1].alpha_used == 0.75);
  CHECK(res.control.values(0, 0) == doctest::Approx(1.5));

  opt.backtracking = false;
  const auto raw = ascend(quadratic_bowl(target), opt, init);
  CHECK(raw.trace.rows[1].value < raw.trace.rows[0].value);
}

TEST_CASE("no acceptable step leaves the control unchanged") {
  auto init = zeros_like(ControlKind::scalar_series, {1}, 1);
  GradientFn liar = [](const ControlSchedule& c) {
    ValueAndGrad out;
    out.value = -std::abs(c.values(0, 0));
    out.grad = c;
    out.grad.values.setConstant(1.0);  // points uphill only in the caller's imagination
    return out;
  };
  OptimizerSpec opt;
  opt.iters = 3;
  const auto res = ascend(liar, opt, init);
  CHECK(res.control.values(0, 0) == 0.0);
  for (const auto& row : res.trace.rows) CHECK(row.alpha_used == 0.0);
}

TEST_CASE("adaptive moments take sign-like first steps") {
  auto init = zeros_like(ControlKind::scalar_series, {1}, 2);
  RowMat target(2, 1);
  target << 100.0, -0.001;
  OptimizerSpec opt;
  opt.alpha_g = 0.01;
  opt.iters = 1;
  opt.update_rule = UpdateRule::adaptive_moments;
  opt.backtracking = false;
  const auto res = ascend(quadratic_bowl(target), opt, init);
  CHECK(res.control.values(0, 0) == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(res.control.values(1, 0) == doctest::Approx(-0.01).epsilon(1e-3));
}

TEST_CASE("value trace is non-decreasing with backtracking for every kind") {
  for (auto kind : {DynamicsKind::single_neuron, DynamicsKind::gain_mod, DynamicsKind::engagement,
                    DynamicsKind::category_engagement, DynamicsKind::lr_mod, DynamicsKind::nonlinear_taylor}) {
    auto inst = random_instance(kind, 3, 30);
    ValueSpec v;
    v.gamma = 0.98;
    v.cost.kind = kind == DynamicsKind::engagement ? CostKind::anchored_norm : CostKind::quadratic;
    v.cost.beta = 0.1;
    if (kind == DynamicsKind::lr_mod) inst.control.bounds = {-0.9, 2.0};
    inst.control = project(inst.control);
    OptimizerSpec opt;
    opt.alpha_g = 5.0;
    opt.iters = 15;
    const auto res = optimize(*inst.problem, v, opt, inst.control);
    CHECK(res.trace.rows.front().value == evaluate_value(*inst.problem, inst.control, v));
    for (std::size_t i = 1; i < res.trace.rows.size(); ++i)
      CHECK(res.trace.rows[i].value >= res.trace.rows[i - 1].value);
    CHECK(res.value == res.trace.rows.back().value);
  }
}

TEST_CASE("checkpoint stride does not change the optimization") {
  auto inst = random_instance(DynamicsKind::gain_mod, 5, 24);
  ValueSpec v;
  v.cost.kind = CostKind::exp_frobenius;
  v.cost.beta = 0.2;
  OptimizerSpec opt;
  opt.iters = 5;
  const auto a = optimize(*inst.problem, v, opt, inst.control);
  opt.checkpoint_stride = 5;
  const auto b = optimize(*inst.problem, v, opt, inst.control);
  CHECK(a.control.max_abs_diff(b.control) < 1e-12);
}

TEST_CASE("trace csv columns") {
  OptTrace t;
  t.rows.push_back({0, -1.5, 2.0, 0.0, 0.25});
  const std::string csv = trace_csv(t);
  CHECK(csv.rfind("iter,V,grad_norm,alpha_used,ms\n", 0) == 0);
  CHECK(csv.find("-1.5") != std::string::npos);
}

TEST_CASE("MAML gradient matches central differences") {
  DynamicsSpec base;
  base.kind = DynamicsKind::two_layer_baseline;
  base.dt = 0.05;
  base.init = random_init(3, 4, 2, 0.3, 2);
  const auto problems = maml_problems(base, maml_tasks(), 5);
  const auto w0 = init_weights_control(base.init);
  ValueSpec v;
  const auto vg = maml_value_grad(problems, w0, v);
  CHECK(vg.value == doctest::Approx(maml_objective(problems, w0, v)));
  const double h = 1e-5;
  double max_rel = 0.0;
  for (Eigen::Index k = 0; k < w0.values.size(); ++k) {
    auto p = w0, m = w0;
    p.values.data()[k] += h;
    m.values.data()[k] -= h;
    const double fd = (maml_objective(problems, p, v) - maml_objective(problems, m, v)) / (2 * h);
    const double a = vg.grad.values.data()[k];
    max_rel = std::max(max_rel, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-7}));
  }
  CHECK(max_rel < 1e-6);
}

TEST_CASE("MAML objective sums the losses after each inner step") {
  DynamicsSpec base;
  base.kind = DynamicsKind::two_layer_baseline;
  base.dt = 0.1;
  base.init = random_init(3, 2, 2, 0.4, 8);
  const auto tasks = maml_tasks();
  const auto problems = maml_problems(base, tasks, 3);
  double expect = 0.0;
  for (const auto& p : problems) {
    const Trajectory tr = integrate(p, no_control(3));
    expect -= tr.loss[1] + tr.loss[2] + tr.loss[3];
  }
  CHECK(maml_objective(problems, init_weights_control(base.init), ValueSpec{}) == doctest::Approx(expect));
}

TEST_CASE("strict MAML rejects discounting and costs") {
  DynamicsSpec base;
  base.kind = DynamicsKind::two_layer_baseline;
  base.dt = 0.1;
  base.init = random_init(3, 2, 2, 0.4, 8);
  const auto problems = maml_problems(base, maml_tasks(), 2);
  ValueSpec v;
  v.gamma = 0.9;
  CHECK_THROWS_AS(maml_objective(problems, init_weights_control(base.init), v), ConfigError);
  CHECK_NOTHROW(maml_objective(problems, init_weights_control(base.init), v, false));
  CHECK_THROWS_AS(maml_problems(base, maml_tasks(), 0), InvalidParameter);
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  for (int threads : {1, 3}) {
    std::vector<std::atomic<int>> hits(17);
    parallel_for(17, threads, [&](int i) { hits[static_cast<size_t>(i)]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(5, threads,
                                 [](int i) {
                                   if (i == 3) throw InvalidParameter("boom");
                                 }),
                    InvalidParameter);
  }
}

TEST_CASE("optimizer spec validation") {
  OptimizerSpec o;
  o.alpha_g = -1.0;
  CHECK_THROWS_AS(o.validate(), InvalidParameter);
  o.alpha_g = 1.0;
  o.iters = -1;
  CHECK_THROWS_AS(o.validate(), InvalidParameter);
  CHECK(update_rule_from_string("adaptive_moments") == UpdateRule::adaptive_moments);
}
