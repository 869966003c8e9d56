#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace effort {

// Weights of the network at one time step. The single-neuron model keeps its
// scalar weight in a 1x1 w1 and leaves w2 empty.
struct NetState {
  Eigen::MatrixXd w1;  // H x I
  Eigen::MatrixXd w2;  // O x H

  static NetState scalar(double w);
  double w() const { return w1(0, 0); }

  bool is_scalar() const { return w2.size() == 0 && w1.size() == 1; }
  Eigen::Index size() const { return w1.size() + w2.size(); }
  bool all_finite() const { return w1.allFinite() && w2.allFinite(); }
  double max_abs() const;
  NetState zeros_like() const;
  void set_zero();
  double dot(const NetState& other) const;

  bool operator==(const NetState& other) const;
};

// Gaussian init with mean 0. Seeds are consumed in w1-then-w2 row-major order.
NetState random_init(int input_dim, int hidden, int output_dim, double stddev, std::uint64_t seed);

}  // namespace effort
