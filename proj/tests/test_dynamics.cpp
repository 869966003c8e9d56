#include <doctest.h>

#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

#include "effort/dynamics.hpp"
#include "effort/errors.hpp"
#include "effort/expm.hpp"
#include "support.hpp"

using namespace effort;
using testing::random_mat;
using testing::random_task;

namespace {

DynamicsSpec two_layer(DynamicsKind kind, int in, int hid, int out, int steps, double dt, std::uint64_t seed) {
  DynamicsSpec s;
  s.kind = kind;
  s.dt = dt;
  s.steps = steps;
  s.lambda = 0.02;
  s.init = random_init(in, hid, out, 0.3, seed);
  return s;
}

bool same_states(const Trajectory& a, const Trajectory& b) {
  if (a.states.size() != b.states.size() || a.loss != b.loss) return false;
  for (std::size_t i = 0; i < a.states.size(); ++i)
    if (!(a.states[i] == b.states[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("expm agrees with Eigen's matrix exponential") {
  for (int n : {1, 2, 5, 9}) {
    for (double scale : {1e-3, 0.5, 4.0, 40.0}) {
      const Mat a = random_mat(n, n, scale, static_cast<std::uint64_t>(n * 100 + scale));
      const Mat ref = a.exp();
      const Mat got = expm(a);
      CHECK((got - ref).norm() <= 1e-10 * std::max(1.0, ref.norm()));
    }
  }
  CHECK(expm(Mat::Zero(3, 3)).isIdentity());
  const Mat d = Vec::LinSpaced(4, -2.0, 1.0).asDiagonal();
  CHECK(expm(d).diagonal().isApprox(Vec::LinSpaced(4, -2.0, 1.0).array().exp().matrix()));
}

TEST_CASE("single neuron Euler step by hand") {
  const auto task = two_gaussian_moments({2.0, 1.0});
  DynamicsSpec s;
  s.kind = DynamicsKind::single_neuron;
  s.tau_w = 2.0;
  s.lambda = 0.1;
  s.dt = 0.01;
  s.steps = 1;
  const NetState w = NetState::scalar(0.3);
  const double g = 0.25, gt = 1.25;
  const double expect = 0.3 + 0.01 / 2.0 * (gt * 2.0 - (gt * gt * 5.0 + 0.1) * 0.3);
  CHECK(step_single_neuron(w, g, task, s).w() == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("expected loss of the single neuron by hand") {
  const auto task = two_gaussian_moments({2.0, 1.0});
  DynamicsSpec s;
  s.kind = DynamicsKind::single_neuron;
  s.dt = 0.01;
  s.steps = 1;
  s.init = NetState::scalar(0.4);
  const Problem p(s, TaskContext::single(task));
  const double g[] = {0.5};
  // 1/2 <(y - g~ w x)^2> = 1/2 (1 - 2 g~ w mu + g~^2 w^2 (mu^2 + sigma^2))
  const double gw = 1.5 * 0.4;
  CHECK(expected_loss(p, s.init, g, 0) == doctest::Approx(0.5 * (1.0 - 2.0 * gw * 2.0 + gw * gw * 5.0)));
}

TEST_CASE("Euler converges to the closed forms at first order") {
  const auto task = two_gaussian_moments({2.0, 1.0});
  DynamicsSpec s;
  s.kind = DynamicsKind::single_neuron;
  s.lambda = 0.1;
  s.init = NetState::scalar(0.0);
  double prev_err = 0.0;
  for (int refine : {1, 2, 4}) {
    s.dt = 0.01 / refine;
    s.steps = 200 * refine;
    auto g = zeros_like(ControlKind::scalar_series, {1}, s.steps);
    for (int i = 0; i < s.steps; ++i) g.values(i, 0) = 0.3 * std::sin(i * s.dt);
    const Trajectory tr = integrate(Problem(s, TaskContext::single(task)), g);
    double err = 0.0;
    for (int k = 1; k <= 10; ++k) {
      const int n = k * s.steps / 10;
      err = std::max(err, std::abs(tr.states[static_cast<size_t>(n)].w() - closed_form_single_neuron(g, task, s, n * s.dt)));
    }
    if (refine > 1) CHECK(prev_err / err == doctest::Approx(2.0).epsilon(0.05));
    prev_err = err;
  }
}

TEST_CASE("single-layer closed form matches a fine Euler run") {
  const auto task = random_task(3, 2, 21);
  DynamicsSpec s;
  s.kind = DynamicsKind::single_layer;
  s.lambda = 0.05;
  s.dt = 1e-4;
  s.steps = 20000;
  s.init.w1 = random_mat(2, 3, 0.3, 4);
  auto g = zeros_like(ControlKind::matrix_pair_series, {2, 3}, s.steps, 5000);
  g.values = random_mat(4, 6, 0.3, 8);
  const Trajectory tr = integrate(Problem(s, TaskContext::single(task)), g);
  for (int k = 1; k <= 10; ++k) {
    const int n = k * 2000;
    const auto cf = closed_form_single_layer(g, task, s, n * s.dt);
    CHECK_FALSE(cf.ill_conditioned);
    const Mat& e = tr.states[static_cast<size_t>(n)].w1;
    CHECK((cf.w - e).norm() <= 1e-3 * e.norm());
  }
  // uncontrolled: W converges to the regression solution when lambda = 0
  s.lambda = 0.0;
  s.dt = 0.1;
  s.steps = 1;
  const auto far = closed_form_single_layer(no_control(1), task, s, 0.1);
  CHECK(far.w.allFinite());
}

TEST_CASE("neutral controls reproduce the baseline bit for bit") {
  const auto task = with_bias(correlated_gaussian_moments({3.0, 1.0, 1.0, 1.0, 0.8}));
  const int in = task.input_dim, hid = 4, out = task.output_dim, n = 50;
  const auto base_spec = two_layer(DynamicsKind::two_layer_baseline, in, hid, out, n, 0.05, 3);
  const Trajectory base = integrate(Problem(base_spec, TaskContext::single(task)), no_control(n));

  auto spec = base_spec;
  spec.kind = DynamicsKind::gain_mod;
  CHECK(same_states(base, integrate(Problem(spec, TaskContext::single(task)),
                                    zeros_like(ControlKind::matrix_pair_series, {hid, in, out, hid}, n))));
  spec.kind = DynamicsKind::lr_mod;
  CHECK(same_states(base, integrate(Problem(spec, TaskContext::single(task)),
                                    zeros_like(ControlKind::scalar_series, {1}, n))));
  spec.kind = DynamicsKind::category_engagement;
  auto phi = zeros_like(ControlKind::category_series, {out}, n);
  phi.values.setOnes();
  CHECK(same_states(base, integrate(Problem(spec, TaskContext::single(task)), phi)));

  const auto blocks = compose_block_tasks({random_task(2, 1, 1), random_task(1, 2, 2)});
  auto bspec = two_layer(DynamicsKind::two_layer_baseline, blocks.combined.input_dim, hid, blocks.combined.output_dim,
                         n, 0.05, 4);
  const Trajectory bbase = integrate(Problem(bspec, TaskContext::single(blocks.combined)), no_control(n));
  bspec.kind = DynamicsKind::engagement;
  auto psi = zeros_like(ControlKind::engagement_series, {2}, n);
  psi.values.setOnes();
  CHECK(same_states(bbase, integrate(Problem(bspec, TaskContext::engagement(blocks)), psi)));
}

TEST_CASE("identity nonlinearity turns the Taylor model into gain modulation") {
  const auto task = random_task(3, 2, 6);
  auto spec = two_layer(DynamicsKind::gain_mod, 3, 4, 2, 30, 0.05, 7);
  auto g = zeros_like(ControlKind::matrix_pair_series, {4, 3, 2, 4}, 30);
  g.values = random_mat(30, 20, 0.2, 9);
  const Trajectory lin = integrate(Problem(spec, TaskContext::single(task)), g);
  spec.kind = DynamicsKind::nonlinear_taylor;
  spec.nonlinearity = Nonlinearity::identity();
  const Trajectory tay = integrate(Problem(spec, TaskContext::single(task)), g);
  for (std::size_t i = 0; i < lin.states.size(); ++i) {
    CHECK((lin.states[i].w1 - tay.states[i].w1).norm() < 1e-12);
    CHECK((lin.states[i].w2 - tay.states[i].w2).norm() < 1e-12);
  }
}

TEST_CASE("gain modulation step by hand") {
  const auto task = random_task(2, 2, 12);
  auto spec = two_layer(DynamicsKind::gain_mod, 2, 3, 2, 1, 0.1, 13);
  spec.tau_w = 1.5;
  const Mat g1 = random_mat(3, 2, 0.3, 14), g2 = random_mat(2, 3, 0.3, 15);
  const NetState& w = spec.init;
  const Mat a1 = (Mat::Ones(3, 2) + g1).cwiseProduct(w.w1), a2 = (Mat::Ones(2, 3) + g2).cwiseProduct(w.w2);
  const Mat e = task.sigma_xy.transpose() - a2 * a1 * task.sigma_x;
  const Mat d1 = (Mat::Ones(3, 2) + g1).cwiseProduct(a2.transpose() * e) - spec.lambda * w.w1;
  const Mat d2 = (Mat::Ones(2, 3) + g2).cwiseProduct(e * a1.transpose()) - spec.lambda * w.w2;
  const NetState next = step_gain_mod(w, g1, g2, task, spec);
  CHECK((next.w1 - (w.w1 + spec.dt / spec.tau_w * d1)).norm() < 1e-13);
  CHECK((next.w2 - (w.w2 + spec.dt / spec.tau_w * d2)).norm() < 1e-13);
}

TEST_CASE("two-layer baseline reaches the regression solution") {
  const auto task = correlated_gaussian_moments({3.0, 1.0, 1.0, 1.0, 0.8});
  auto spec = two_layer(DynamicsKind::two_layer_baseline, 2, 4, 2, 4000, 0.02, 17);
  spec.lambda = 0.0;
  spec.init = random_init(2, 4, 2, 0.01, 17);
  const Trajectory tr = integrate(Problem(spec, TaskContext::single(task)), no_control(4000), 4000);
  const NetState& w = tr.final_state();
  const Mat target = task.sigma_xy.transpose() * task.sigma_x.inverse();
  CHECK((w.w2 * w.w1 - target).norm() < 1e-3);
  CHECK(tr.states.size() == 2);  // stride keeps the first and the last
}

TEST_CASE("learning-rate modulation scales the step") {
  const auto task = random_task(2, 2, 31);
  auto spec = two_layer(DynamicsKind::lr_mod, 2, 3, 2, 1, 0.05, 32);
  const NetState base = step_two_layer_baseline(spec.init, task, spec);
  const NetState fast = step_lr_mod(spec.init, 1.0, task, spec);
  CHECK(((fast.w1 - spec.init.w1) - 2.0 * (base.w1 - spec.init.w1)).norm() < 1e-13);
  CHECK_THROWS_AS(step_lr_mod(spec.init, -1.0, task, spec), InvalidParameter);
}

TEST_CASE("task switching alternates the active task") {
  TaskContext ctx;
  ctx.tasks = {random_task(2, 1, 1), random_task(2, 1, 2)};
  ctx.switch_period = 3;
  CHECK(ctx.active(0) == 0);
  CHECK(ctx.active(2) == 0);
  CHECK(ctx.active(3) == 1);
  CHECK(ctx.active(6) == 0);
}

TEST_CASE("divergence is reported with the step") {
  const auto task = two_gaussian_moments({2.0, 1.0});
  DynamicsSpec s;
  s.kind = DynamicsKind::single_neuron;
  s.dt = 1.0;  // rate 5 per unit time with dt 1 oscillates and blows up
  s.steps = 2000;
  s.init = NetState::scalar(0.0);
  try {
    integrate(Problem(s, TaskContext::single(task)), no_control(2000));
    FAIL("expected divergence");
  } catch (const Diverged& e) {
    CHECK(e.step() > 0);
    CHECK(e.step() <= 2000);
  }
}

TEST_CASE("SGD mean tracks the expected dynamics") {
  const auto task = two_gaussian_moments({2.0, 1.0});
  DynamicsSpec s;
  s.kind = DynamicsKind::single_neuron;
  s.lambda = 0.1;
  s.dt = 0.005;
  s.steps = 400;
  s.init = NetState::scalar(0.0);
  const Problem p(s, TaskContext::single(task));
  const auto g = zeros_like(ControlKind::scalar_series, {1}, s.steps);
  const Trajectory ode = integrate(p, g);
  double mean_w = 0.0;
  const int runs = 20;
  for (int r = 0; r < runs; ++r) {
    SgdOptions o;
    o.batch_size = 128;
    o.seed = 100 + static_cast<std::uint64_t>(r);
    const Trajectory sgd = simulate_sgd(p, g, o);
    mean_w += sgd.final_state().w() / runs;
  }
  CHECK(mean_w == doctest::Approx(ode.final_state().w()).epsilon(0.01));
  SgdOptions o;
  o.seed = 5;
  CHECK(simulate_sgd(p, g, o).loss == simulate_sgd(p, g, o).loss);
}

TEST_CASE("trajectory csv") {
  const auto task = two_gaussian_moments({2.0, 1.0});
  DynamicsSpec s;
  s.kind = DynamicsKind::single_neuron;
  s.dt = 0.1;
  s.steps = 3;
  s.init = NetState::scalar(0.0);
  const std::string csv = trajectory_csv(integrate(Problem(s, TaskContext::single(task)), no_control(3)));
  CHECK(csv.rfind("step,time,loss,reward,cost,net_reward,w1_l1,w1_l2,w2_l1,w2_l2,g_l2\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("bad specs are rejected") {
  DynamicsSpec s;
  s.kind = DynamicsKind::two_layer_baseline;
  s.dt = -1.0;
  s.steps = 3;
  CHECK_THROWS_AS(s.validate(), InvalidParameter);
  s.dt = 0.1;
  s.tau_w = 0.0;
  CHECK_THROWS_AS(s.validate(), InvalidParameter);
  const auto task = random_task(2, 2, 1);
  auto ok = two_layer(DynamicsKind::two_layer_baseline, 3, 2, 2, 5, 0.1, 1);
  CHECK_THROWS_AS(Problem(ok, TaskContext::single(task)), DimensionMismatch);
}
