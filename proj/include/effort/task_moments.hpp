#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace effort {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Draws raw samples for a task. X is input_dim x batch, Y is output_dim x batch.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual void sample(int batch, std::mt19937_64& rng, Mat& x, Mat& y) const = 0;
};

// Second-order statistics of a task. These fully determine the average
// gradient-flow dynamics of a linear network.
//   sigma_x  = <X X^T>  (I x I)
//   sigma_xy = <X Y^T>  (I x O)
//   sigma_y  = <Y Y^T>  (O x O)
struct TaskMoments {
  int input_dim = 0;
  int output_dim = 0;
  Mat sigma_x;
  Mat sigma_xy;
  Mat sigma_y;
  Vec mean_x;
  Vec mean_y;
  // Null for moment-only tasks (e.g. MNIST moments loaded from JSON).
  std::shared_ptr<const SampleSource> source;

  // Throws DimensionMismatch / InvalidParameter when an invariant is violated.
  void validate() const;
  bool sampleable() const { return source != nullptr; }
};

struct TwoGaussianTask {
  double mu_x = 2.0;
  double sigma_x_noise = 1.0;
};

struct CorrelatedGaussianTask {
  double mu1 = 3.0;
  double mu2 = 1.0;
  double s1 = 1.0;
  double s2 = 1.0;
  double p = 0.8;
};

// Labels y = +-1 with equal probability, x ~ N(y mu, sigma^2). 1x1 moments.
TaskMoments two_gaussian_moments(const TwoGaussianTask& task);

// y1 = +-1, y2 = y1 (1 - 2 xi) with xi ~ Bernoulli(p), x_i ~ N(y_i mu_i, s_i^2).
TaskMoments correlated_gaussian_moments(const CorrelatedGaussianTask& task);

// Hierarchical concepts on a binary tree with `levels` levels. Inputs are the
// 2^(L-1) leaves as one-hot vectors and outputs the 2^L - 1 tree nodes.
// Moments follow the unnormalized convention: sigma_x = I, sigma_xy^T is the
// node-by-leaf membership matrix and sigma_y = sigma_xy^T sigma_xy.
TaskMoments semantic_moments(int levels);

// The membership matrix (O x I) used by semantic_moments.
Mat semantic_membership(int levels);

// Appends a constant-1 input dimension.
TaskMoments with_bias(const TaskMoments& task);

struct BlockTaskSet {
  std::vector<TaskMoments> tasks;
  TaskMoments combined;
  std::vector<int> input_offset;
  std::vector<int> output_offset;

  int size() const { return static_cast<int>(tasks.size()); }
  // Combined sigma_xy with every output column outside task tau zeroed.
  Mat padded_sigma_xy(int tau) const;
  // Diagonal block tau of the combined moments.
  TaskMoments block(int tau) const;
  // Task index owning each combined output.
  std::vector<int> output_group() const;
};

// Inputs and outputs of the tasks are concatenated. Off-diagonal blocks of
// sigma_x, sigma_y and sigma_xy hold mean outer products when cross_means is
// set (independent tasks), zeros otherwise.
BlockTaskSet compose_block_tasks(const std::vector<TaskMoments>& tasks, bool cross_means = true);

// Deterministic for a given seed. Throws UnsupportedOperation for moment-only tasks.
std::pair<Mat, Mat> sample_batch(const TaskMoments& task, int batch_size, std::uint64_t seed);

// Empirical moments of a batch (plain averages).
TaskMoments empirical_moments(const Mat& x, const Mat& y);

nlohmann::json moments_to_json(const TaskMoments& task);
TaskMoments moments_from_json(const nlohmann::json& j);
TaskMoments load_moments(const std::string& path);
void save_moments(const TaskMoments& task, const std::string& path);

}  // namespace effort
