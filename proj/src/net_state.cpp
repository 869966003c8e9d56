#include "effort/net_state.hpp"

#include <algorithm>
#include <random>

namespace effort {

NetState NetState::scalar(double w) {
  NetState s;
  s.w1 = Eigen::MatrixXd::Constant(1, 1, w);
  s.w2 = Eigen::MatrixXd(0, 0);
  return s;
}

double NetState::max_abs() const {
  double m = 0.0;
  if (w1.size() > 0) m = std::max(m, w1.cwiseAbs().maxCoeff());
  if (w2.size() > 0) m = std::max(m, w2.cwiseAbs().maxCoeff());
  return m;
}

NetState NetState::zeros_like() const {
  NetState s;
  s.w1 = Eigen::MatrixXd::Zero(w1.rows(), w1.cols());
  s.w2 = Eigen::MatrixXd::Zero(w2.rows(), w2.cols());
  return s;
}

void NetState::set_zero() {
  w1.setZero();
  w2.setZero();
}

double NetState::dot(const NetState& other) const {
  double d = 0.0;
  if (w1.size() > 0) d += w1.cwiseProduct(other.w1).sum();
  if (w2.size() > 0) d += w2.cwiseProduct(other.w2).sum();
  return d;
}

bool NetState::operator==(const NetState& other) const {
  return w1.rows() == other.w1.rows() && w1.cols() == other.w1.cols() &&
         w2.rows() == other.w2.rows() && w2.cols() == other.w2.cols() && w1 == other.w1 &&
         w2 == other.w2;
}

NetState random_init(int input_dim, int hidden, int output_dim, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  NetState s;
  s.w1.resize(hidden, input_dim);
  s.w2.resize(output_dim, hidden);
  for (int r = 0; r < hidden; ++r)
    for (int c = 0; c < input_dim; ++c) s.w1(r, c) = dist(rng);
  for (int r = 0; r < output_dim; ++r)
    for (int c = 0; c < hidden; ++c) s.w2(r, c) = dist(rng);
  return s;
}

}  // namespace effort
