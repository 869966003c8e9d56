#include "effort/control.hpp"

#include <algorithm>
#include <cmath>

#include "effort/errors.hpp"
#include "effort/json_util.hpp"

namespace effort {

std::string to_string(ControlKind kind) {
  switch (kind) {
    case ControlKind::scalar_series: return "scalar_series";
    case ControlKind::matrix_pair_series: return "matrix_pair_series";
    case ControlKind::engagement_series: return "engagement_series";
    case ControlKind::category_series: return "category_series";
    case ControlKind::init_weights: return "init_weights";
    case ControlKind::basis_coeff_series: return "basis_coeff_series";
  }
  return "?";
}

ControlKind control_kind_from_string(const std::string& s) {
  for (auto k : {ControlKind::scalar_series, ControlKind::matrix_pair_series,
                 ControlKind::engagement_series, ControlKind::category_series,
                 ControlKind::init_weights, ControlKind::basis_coeff_series}) {
    if (to_string(k) == s) return k;
  }
  throw FormatError("unknown control kind: " + s);
}

int per_step_size(ControlKind kind, const std::vector<int>& dims) {
  switch (kind) {
    case ControlKind::matrix_pair_series:
    case ControlKind::init_weights: {
      if (dims.size() % 2 != 0) throw InvalidParameter("matrix control dims must be (rows, cols) pairs");
      int n = 0;
      for (size_t k = 0; k < dims.size(); k += 2) {
        if (dims[k] < 0 || dims[k + 1] < 0) throw InvalidParameter("negative control dim");
        n += dims[k] * dims[k + 1];
      }
      return n;
    }
    default:
      if (dims.size() != 1 || dims[0] < 0) throw InvalidParameter("vector control needs one non-negative dim");
      return dims[0];
  }
}

std::span<const double> ControlSchedule::at(int step) const {
  const int row = kind == ControlKind::init_weights ? 0 : step / segment;
  return {values.data() + static_cast<Eigen::Index>(row) * values.cols(),
          static_cast<size_t>(values.cols())};
}

std::span<double> ControlSchedule::at(int step) {
  const int row = kind == ControlKind::init_weights ? 0 : step / segment;
  return {values.data() + static_cast<Eigen::Index>(row) * values.cols(),
          static_cast<size_t>(values.cols())};
}

bool ControlSchedule::same_shape(const ControlSchedule& other) const {
  return kind == other.kind && dims == other.dims && segment == other.segment &&
         values.rows() == other.values.rows() && values.cols() == other.values.cols();
}

double ControlSchedule::max_abs_diff(const ControlSchedule& other) const {
  if (!same_shape(other)) throw DimensionMismatch("control schedules differ in shape");
  if (values.size() == 0) return 0.0;
  return (values - other.values).cwiseAbs().maxCoeff();
}

ControlSchedule zeros_like(ControlKind kind, const std::vector<int>& dims, int steps, int segment) {
  if (steps < 0) throw InvalidParameter("steps must be >= 0");
  if (segment < 1) throw InvalidParameter("segment length must be >= 1");
  ControlSchedule s;
  s.kind = kind;
  s.dims = dims;
  s.segment = segment;
  const int width = per_step_size(kind, dims);
  if (kind == ControlKind::init_weights) {
    s.values = RowMat::Zero(1, width);
    return s;
  }
  if (steps % segment != 0) throw InvalidParameter("segment length must divide the number of steps");
  const double neutral =
      (kind == ControlKind::engagement_series || kind == ControlKind::category_series) ? 1.0 : 0.0;
  s.values = RowMat::Constant(steps / segment, width, neutral);
  return s;
}

ControlSchedule no_control(int steps) { return zeros_like(ControlKind::scalar_series, {0}, steps); }

void project_in_place(ControlSchedule& s) {
  const double lo = s.bounds.lo, hi = s.bounds.hi;
  if (lo > hi) throw InvalidParameter("control bounds are inverted");
  s.values = s.values.cwiseMax(lo).cwiseMin(hi);
}

ControlSchedule project(const ControlSchedule& schedule) {
  ControlSchedule out = schedule;
  project_in_place(out);
  return out;
}

ControlSchedule coarse_to_fine(const ControlSchedule& s) {
  if (s.kind == ControlKind::init_weights || s.segment == 1) return s;
  ControlSchedule out = s;
  out.segment = 1;
  out.values.resize(s.steps(), s.per_step());
  for (int i = 0; i < s.steps(); ++i) out.values.row(i) = s.values.row(i / s.segment);
  return out;
}

ControlSchedule init_weights_control(const NetState& state0) {
  const auto h = static_cast<int>(state0.w1.rows()), in = static_cast<int>(state0.w1.cols());
  const auto o = static_cast<int>(state0.w2.rows()), h2 = static_cast<int>(state0.w2.cols());
  ControlSchedule s = zeros_like(ControlKind::init_weights, {h, in, o, h2}, 0);
  Eigen::Map<RowMat>(s.values.data(), h, in) = state0.w1;
  Eigen::Map<RowMat>(s.values.data() + h * in, o, h2) = state0.w2;
  return s;
}

NetState init_weights_state(const ControlSchedule& s) {
  if (s.kind != ControlKind::init_weights || s.dims.size() != 4)
    throw InvalidParameter("schedule does not hold initial weights");
  const int h = s.dims[0], in = s.dims[1], o = s.dims[2], h2 = s.dims[3];
  NetState st;
  st.w1 = Eigen::Map<const RowMat>(s.values.data(), h, in);
  st.w2 = Eigen::Map<const RowMat>(s.values.data() + h * in, o, h2);
  return st;
}

Eigen::MatrixXd expand_basis(std::span<const double> nu, const NeuronBasis& basis) {
  if (static_cast<int>(nu.size()) != basis.basis_size())
    throw DimensionMismatch("basis coefficient count does not match basis size");
  Eigen::MatrixXd g(basis.rows, basis.cols);
  if (basis.axis == BasisAxis::rows) {
    for (int r = 0; r < basis.rows; ++r) g.row(r).setConstant(nu[static_cast<size_t>(r)]);
  } else {
    for (int c = 0; c < basis.cols; ++c) g.col(c).setConstant(nu[static_cast<size_t>(c)]);
  }
  return g;
}

Eigen::VectorXd contract_basis(const Eigen::MatrixXd& g, const NeuronBasis& basis) {
  if (g.rows() != basis.rows || g.cols() != basis.cols) throw DimensionMismatch("gain shape does not match basis");
  if (basis.axis == BasisAxis::rows) return g.rowwise().mean();
  return g.colwise().mean().transpose();
}

Eigen::VectorXd basis_adjoint(const Eigen::MatrixXd& g, const NeuronBasis& basis) {
  if (g.rows() != basis.rows || g.cols() != basis.cols) throw DimensionMismatch("gain shape does not match basis");
  if (basis.axis == BasisAxis::rows) return g.rowwise().sum();
  return g.colwise().sum().transpose();
}

RowMat expand_basis_series(const ControlSchedule& schedule, const NeuronBasis& basis) {
  if (schedule.kind != ControlKind::basis_coeff_series) throw InvalidParameter("not a basis schedule");
  RowMat out(schedule.segments(), basis.rows * basis.cols);
  for (int k = 0; k < schedule.segments(); ++k) {
    const Eigen::MatrixXd g = expand_basis(schedule.at(k * schedule.segment), basis);
    Eigen::Map<RowMat>(out.row(k).data(), basis.rows, basis.cols) = g;
  }
  return out;
}

namespace {

nlohmann::json bound_to_json(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

double bound_from_json(const nlohmann::json& j, double fallback) {
  if (j.is_null()) return fallback;
  if (!j.is_number()) throw FormatError("schedule bounds must be numbers or null");
  return j.get<double>();
}

}  // namespace

nlohmann::json schedule_to_json(const ControlSchedule& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind);
  j["dims"] = s.dims;
  j["segment"] = s.segment;
  j["bounds"] = nlohmann::json::array({bound_to_json(s.bounds.lo), bound_to_json(s.bounds.hi)});
  j["values"] = mat_to_json(s.values);
  return j;
}

ControlSchedule schedule_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("schedule: expected an object");
  for (const char* key : {"kind", "dims", "segment", "bounds", "values"})
    if (!j.contains(key)) throw FormatError(std::string("schedule: missing key ") + key);
  ControlSchedule s;
  s.kind = control_kind_from_string(j["kind"].get<std::string>());
  s.dims = j["dims"].get<std::vector<int>>();
  s.segment = j["segment"].get<int>();
  const auto& b = j["bounds"];
  if (!b.is_array() || b.size() != 2) throw FormatError("schedule: bounds must be [lo, hi]");
  s.bounds.lo = bound_from_json(b[0], -std::numeric_limits<double>::infinity());
  s.bounds.hi = bound_from_json(b[1], std::numeric_limits<double>::infinity());
  const Eigen::MatrixXd v = mat_from_json(j["values"], "values");
  s.values = v;
  const int width = per_step_size(s.kind, s.dims);
  if (s.values.rows() > 0 && s.values.cols() != width) throw FormatError("schedule: values width does not match dims");
  if (s.values.rows() == 0) s.values.resize(0, width);
  return s;
}

}  // namespace effort
