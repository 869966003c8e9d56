#include <doctest.h>

#include "effort/control.hpp"
#include "effort/errors.hpp"
#include "effort/net_state.hpp"
#include "support.hpp"

using namespace effort;

TEST_CASE("per-step widths") {
  CHECK(per_step_size(ControlKind::scalar_series, {1}) == 1);
  CHECK(per_step_size(ControlKind::matrix_pair_series, {3, 2, 4, 3}) == 6 + 12);
  CHECK(per_step_size(ControlKind::engagement_series, {3}) == 3);
  CHECK(per_step_size(ControlKind::init_weights, {3, 2, 4, 3}) == 18);
  const auto s = zeros_like(ControlKind::matrix_pair_series, {3, 2, 4, 3}, 10, 5);
  CHECK(s.segments() == 2);
  CHECK(s.steps() == 10);
  CHECK(s.per_step() == 18);
  CHECK_THROWS_AS(zeros_like(ControlKind::scalar_series, {1}, 10, 3), InvalidParameter);
  CHECK(no_control(7).per_step() == 0);
  CHECK(no_control(7).steps() == 7);
}

TEST_CASE("segments map steps to rows") {
  auto s = zeros_like(ControlKind::scalar_series, {1}, 12, 4);
  s.values << 1.0, 2.0, 3.0;
  CHECK(s.at(0)[0] == 1.0);
  CHECK(s.at(3)[0] == 1.0);
  CHECK(s.at(4)[0] == 2.0);
  CHECK(s.at(11)[0] == 3.0);
  const auto fine = coarse_to_fine(s);
  CHECK(fine.segments() == 12);
  for (int i = 0; i < 12; ++i) CHECK(fine.at(i)[0] == s.at(i)[0]);
}

TEST_CASE("projection clamps into the box and is idempotent") {
  auto s = zeros_like(ControlKind::engagement_series, {3}, 5);
  s.bounds = {0.0, 2.0};
  s.values = testing::random_mat(5, 3, 3.0, 4);
  const auto p = project(s);
  CHECK(p.values.minCoeff() >= 0.0);
  CHECK(p.values.maxCoeff() <= 2.0);
  CHECK(project(p).values == p.values);
  for (Eigen::Index r = 0; r < 5; ++r)
    for (Eigen::Index c = 0; c < 3; ++c)
      if (s.values(r, c) >= 0.0 && s.values(r, c) <= 2.0) CHECK(p.values(r, c) == s.values(r, c));
  s.bounds = {1.0, 0.0};
  CHECK_THROWS_AS(project(s), InvalidParameter);
}

TEST_CASE("initial weights round trip through a control") {
  const NetState w = random_init(3, 4, 2, 0.5, 9);
  const auto c = init_weights_control(w);
  CHECK(c.kind == ControlKind::init_weights);
  CHECK(c.steps() == 0);
  CHECK(init_weights_state(c) == w);
  CHECK_THROWS_AS(init_weights_state(zeros_like(ControlKind::scalar_series, {1}, 3)), InvalidParameter);
}

TEST_CASE("neuron basis expand and contract") {
  const NeuronBasis rows{BasisAxis::rows, BasisLayer::first, 3, 2};
  const double nu[] = {1.0, 2.0, 3.0};
  const Mat g = expand_basis(nu, rows);
  CHECK(g(0, 1) == 1.0);
  CHECK(g(2, 0) == 3.0);
  // contract_basis inverts expand_basis on the basis span
  CHECK(contract_basis(g, rows).isApprox(Vec::LinSpaced(3, 1.0, 3.0)));
  // basis_adjoint is the transpose of expand: <expand(nu), G> == <nu, adjoint(G)>
  const Mat m = testing::random_mat(3, 2, 1.0, 2);
  const NeuronBasis cols{BasisAxis::cols, BasisLayer::second, 3, 2};
  const double nu2[] = {0.4, -1.1};
  const Vec adj = basis_adjoint(m, cols);
  CHECK((expand_basis(nu2, cols).cwiseProduct(m)).sum() == doctest::Approx(0.4 * adj(0) - 1.1 * adj(1)));
  CHECK_THROWS_AS(expand_basis(nu2, rows), DimensionMismatch);
}

TEST_CASE("schedule json round trip keeps infinite bounds") {
  auto s = zeros_like(ControlKind::matrix_pair_series, {2, 2, 1, 2}, 6, 3);
  s.values = testing::random_mat(2, 6, 1.0, 5);
  s.bounds = {-0.5, INFINITY};
  const auto back = schedule_from_json(schedule_to_json(s));
  CHECK(back.kind == s.kind);
  CHECK(back.dims == s.dims);
  CHECK(back.segment == 3);
  CHECK(back.values == s.values);
  CHECK(back.bounds.lo == -0.5);
  CHECK(std::isinf(back.bounds.hi));
}

TEST_CASE("kind names") {
  for (auto k : {ControlKind::scalar_series, ControlKind::matrix_pair_series, ControlKind::engagement_series,
                 ControlKind::category_series, ControlKind::init_weights, ControlKind::basis_coeff_series})
    CHECK(control_kind_from_string(to_string(k)) == k);
  CHECK_THROWS(control_kind_from_string("nope"));
}
