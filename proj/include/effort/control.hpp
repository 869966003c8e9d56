#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "effort/net_state.hpp"

namespace effort {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ControlKind {
  scalar_series,       // g(t) or rho(t); a zero-width series for the uncontrolled baseline
  matrix_pair_series,  // G1(t), G2(t) (or a single G(t) for the one-layer model)
  engagement_series,   // psi_tau(t), one per dataset
  category_series,     // phi_c(t), one per class
  init_weights,        // W1(0), W2(0); no per-step values
  basis_coeff_series,  // nu_b(t) on a neuron basis
};

std::string to_string(ControlKind kind);
ControlKind control_kind_from_string(const std::string& s);

struct Bounds {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

// Time-indexed control values. Row k of `values` holds the flattened control
// for segment k; each segment covers `segment` consecutive steps. Matrix kinds
// are flattened row-major, matrix after matrix in the order given by `dims`
// (dims lists rows, cols pairs).
struct ControlSchedule {
  ControlKind kind = ControlKind::scalar_series;
  std::vector<int> dims;
  int segment = 1;
  Bounds bounds;
  RowMat values;

  int per_step() const { return static_cast<int>(values.cols()); }
  int segments() const { return static_cast<int>(values.rows()); }
  // Number of dynamics steps covered; zero for init_weights.
  int steps() const { return kind == ControlKind::init_weights ? 0 : segments() * segment; }
  std::span<const double> at(int step) const;
  std::span<double> at(int step);

  // Max |a - b| over all entries; shapes must match.
  double max_abs_diff(const ControlSchedule& other) const;
  bool same_shape(const ControlSchedule& other) const;
};

// Width of one step of a control with the given kind and dims.
int per_step_size(ControlKind kind, const std::vector<int>& dims);

// Neutral control: zero for additive kinds, one for engagement/category.
// `segment` must divide `steps`.
ControlSchedule zeros_like(ControlKind kind, const std::vector<int>& dims, int steps, int segment = 1);

// A zero-width series for uncontrolled dynamics.
ControlSchedule no_control(int steps);

// Component-wise clamp into [lo, hi].
ControlSchedule project(const ControlSchedule& schedule);
void project_in_place(ControlSchedule& schedule);

ControlSchedule coarse_to_fine(const ControlSchedule& schedule);

// Wraps W(0) as the optimized variable.
ControlSchedule init_weights_control(const NetState& state0);
NetState init_weights_state(const ControlSchedule& schedule);

enum class BasisAxis { rows, cols };
enum class BasisLayer { first, second };

// Indicator basis over whole rows (or columns) of one layer's gain matrix.
struct NeuronBasis {
  BasisAxis axis = BasisAxis::rows;
  BasisLayer layer = BasisLayer::second;
  int rows = 0;  // shape of the modulated layer
  int cols = 0;
  int basis_size() const { return axis == BasisAxis::rows ? rows : cols; }
};

// G = sum_b nu_b G^b.
Eigen::MatrixXd expand_basis(std::span<const double> nu, const NeuronBasis& basis);
// Least-squares inverse of expand_basis (row or column average).
Eigen::VectorXd contract_basis(const Eigen::MatrixXd& g, const NeuronBasis& basis);
// Transpose of expand_basis (row or column sum); used for gradients.
Eigen::VectorXd basis_adjoint(const Eigen::MatrixXd& g, const NeuronBasis& basis);
// Whole-series expansion: rows of the result are row-major G(t).
RowMat expand_basis_series(const ControlSchedule& schedule, const NeuronBasis& basis);

nlohmann::json schedule_to_json(const ControlSchedule& schedule);
ControlSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace effort
