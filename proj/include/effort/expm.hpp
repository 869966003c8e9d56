#pragma once

#include <Eigen/Dense>

namespace effort {

// Matrix exponential by scaling and squaring with a degree-13 Pade
// approximant (Higham 2005).
Eigen::MatrixXd expm(const Eigen::MatrixXd& a);

}  // namespace effort
