#pragma once

#include <cstdint>
#include <random>

#include "effort/dynamics.hpp"
#include "effort/task_moments.hpp"

namespace effort::testing {

// Moments of a random joint Gaussian over (x, y) with nonzero means, so every
// invariant holds by construction.
inline TaskMoments random_task(int in, int out, std::uint64_t seed, double mean_scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int d = in + out;
  Mat c(d, d);
  for (int r = 0; r < d; ++r)
    for (int k = 0; k < d; ++k) c(r, k) = n01(rng) / std::sqrt(static_cast<double>(d));
  Vec m(d);
  for (int r = 0; r < d; ++r) m(r) = mean_scale * n01(rng);
  const Mat second = c * c.transpose() + 0.2 * Mat::Identity(d, d) + m * m.transpose();
  TaskMoments t;
  t.input_dim = in;
  t.output_dim = out;
  t.sigma_x = second.topLeftCorner(in, in);
  t.sigma_xy = second.topRightCorner(in, out);
  t.sigma_y = second.bottomRightCorner(out, out);
  t.mean_x = m.head(in);
  t.mean_y = m.tail(out);
  return t;
}

inline Mat random_mat(int rows, int cols, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, scale);
  Mat a(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int k = 0; k < cols; ++k) a(r, k) = n01(rng);
  return a;
}

inline double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace effort::testing

#include <memory>

#include "effort/control.hpp"

namespace effort::testing {

struct Instance {
  std::unique_ptr<Problem> problem;
  ControlSchedule control;
};

// A small randomized problem of the given kind with a non-neutral control.
inline Instance random_instance(DynamicsKind kind, std::uint64_t seed, int steps = 40, double dt = 0.05) {
  const int in = 3, hid = 3, out = 2;
  DynamicsSpec spec;
  spec.kind = kind;
  spec.tau_w = 1.0;
  spec.lambda = 0.05;
  spec.dt = dt;
  spec.steps = steps;
  TaskContext ctx;
  ControlKind ck = ControlKind::matrix_pair_series;
  std::vector<int> dims = {hid, in, out, hid};
  double jitter_center = 0.0;
  switch (kind) {
    case DynamicsKind::single_neuron:
      ctx = TaskContext::single(two_gaussian_moments({2.0, 1.0}));
      spec.init = NetState::scalar(0.1);
      spec.tau_w = 2.0;
      ck = ControlKind::scalar_series;
      dims = {1};
      break;
    case DynamicsKind::single_layer:
      ctx = TaskContext::single(random_task(in, out, seed));
      spec.init.w1 = random_mat(out, in, 0.3, seed + 1);
      dims = {out, in};
      break;
    case DynamicsKind::engagement: {
      const BlockTaskSet blocks =
          compose_block_tasks({random_task(2, 1, seed), random_task(1, 1, seed + 7), random_task(1, 2, seed + 9)});
      ctx = TaskContext::engagement(blocks);
      spec.init.w1 = random_mat(hid, blocks.combined.input_dim, 0.3, seed + 1);
      spec.init.w2 = random_mat(blocks.combined.output_dim, hid, 0.3, seed + 2);
      ck = ControlKind::engagement_series;
      dims = {blocks.size()};
      jitter_center = 1.0;
      break;
    }
    default:
      ctx = TaskContext::single(random_task(in, out, seed));
      spec.init.w1 = random_mat(hid, in, 0.3, seed + 1);
      spec.init.w2 = random_mat(out, hid, 0.3, seed + 2);
      break;
  }
  if (kind == DynamicsKind::two_layer_baseline) {
    ck = ControlKind::scalar_series;
    dims = {0};
  } else if (kind == DynamicsKind::category_engagement) {
    ck = ControlKind::category_series;
    dims = {out};
    jitter_center = 1.0;
  } else if (kind == DynamicsKind::lr_mod) {
    ck = ControlKind::scalar_series;
    dims = {1};
  }
  Instance inst;
  inst.problem = std::make_unique<Problem>(spec, ctx);
  inst.control = zeros_like(ck, dims, steps);
  const Mat noise = random_mat(inst.control.segments(), inst.control.per_step(), 0.3, seed + 3);
  for (Eigen::Index r = 0; r < noise.rows(); ++r)
    for (Eigen::Index c = 0; c < noise.cols(); ++c) inst.control.values(r, c) = jitter_center + noise(r, c);
  return inst;
}

}  // namespace effort::testing
