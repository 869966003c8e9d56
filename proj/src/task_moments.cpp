#include "effort/task_moments.hpp"

#include <cmath>
#include <string>

#include "effort/errors.hpp"
#include "effort/json_util.hpp"

namespace effort {

namespace {

void check_symmetric_psd(const Mat& m, const char* name) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw InvalidParameter(std::string(name) + " is not symmetric");
  }
  if (m.size() == 0) return;
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10) {
    throw InvalidParameter(std::string(name) + " is not positive semidefinite");
  }
}

class TwoGaussianSource final : public SampleSource {
 public:
  explicit TwoGaussianSource(TwoGaussianTask t) : t_(t) {}
  void sample(int batch, std::mt19937_64& rng, Mat& x, Mat& y) const override {
    x.resize(1, batch);
    y.resize(1, batch);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> noise(0.0, t_.sigma_x_noise);
    for (int b = 0; b < batch; ++b) {
      const double label = coin(rng) ? 1.0 : -1.0;
      y(0, b) = label;
      x(0, b) = label * t_.mu_x + noise(rng);
    }
  }

 private:
  TwoGaussianTask t_;
};

class CorrelatedGaussianSource final : public SampleSource {
 public:
  explicit CorrelatedGaussianSource(CorrelatedGaussianTask t) : t_(t) {}
  void sample(int batch, std::mt19937_64& rng, Mat& x, Mat& y) const override {
    x.resize(2, batch);
    y.resize(2, batch);
    std::bernoulli_distribution coin(0.5);
    std::bernoulli_distribution flip(t_.p);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int b = 0; b < batch; ++b) {
      const double y1 = coin(rng) ? 1.0 : -1.0;
      const double y2 = flip(rng) ? -y1 : y1;
      y(0, b) = y1;
      y(1, b) = y2;
      x(0, b) = y1 * t_.mu1 + t_.s1 * unit(rng);
      x(1, b) = y2 * t_.mu2 + t_.s2 * unit(rng);
    }
  }

 private:
  CorrelatedGaussianTask t_;
};

class SemanticSource final : public SampleSource {
 public:
  explicit SemanticSource(Mat membership) : p_(std::move(membership)) {}
  void sample(int batch, std::mt19937_64& rng, Mat& x, Mat& y) const override {
    const auto inputs = static_cast<int>(p_.cols());
    x = Mat::Zero(inputs, batch);
    y.resize(p_.rows(), batch);
    std::uniform_int_distribution<int> pick(0, inputs - 1);
    for (int b = 0; b < batch; ++b) {
      const int j = pick(rng);
      x(j, b) = 1.0;
      y.col(b) = p_.col(j);
    }
  }

 private:
  Mat p_;
};

class BiasSource final : public SampleSource {
 public:
  explicit BiasSource(std::shared_ptr<const SampleSource> inner) : inner_(std::move(inner)) {}
  void sample(int batch, std::mt19937_64& rng, Mat& x, Mat& y) const override {
    Mat raw;
    inner_->sample(batch, rng, raw, y);
    x.resize(raw.rows() + 1, batch);
    x.topRows(raw.rows()) = raw;
    x.row(raw.rows()).setOnes();
  }

 private:
  std::shared_ptr<const SampleSource> inner_;
};

class BlockSource final : public SampleSource {
 public:
  BlockSource(std::vector<std::shared_ptr<const SampleSource>> parts, std::vector<int> in_dims,
               std::vector<int> out_dims)
      : parts_(std::move(parts)), in_(std::move(in_dims)), out_(std::move(out_dims)) {}
  void sample(int batch, std::mt19937_64& rng, Mat& x, Mat& y) const override {
    int total_in = 0, total_out = 0;
    for (size_t k = 0; k < parts_.size(); ++k) {
      total_in += in_[k];
      total_out += out_[k];
    }
    x.resize(total_in, batch);
    y.resize(total_out, batch);
    int io = 0, oo = 0;
    Mat px, py;
    for (size_t k = 0; k < parts_.size(); ++k) {
      parts_[k]->sample(batch, rng, px, py);
      x.middleRows(io, in_[k]) = px;
      y.middleRows(oo, out_[k]) = py;
      io += in_[k];
      oo += out_[k];
    }
  }

 private:
  std::vector<std::shared_ptr<const SampleSource>> parts_;
  std::vector<int> in_, out_;
};

}  // namespace

void TaskMoments::validate() const {
  if (input_dim <= 0 || output_dim <= 0) throw DimensionMismatch("task dims must be positive");
  if (sigma_x.rows() != input_dim || sigma_x.cols() != input_dim)
    throw DimensionMismatch("sigma_x must be I x I");
  if (sigma_xy.rows() != input_dim || sigma_xy.cols() != output_dim)
    throw DimensionMismatch("sigma_xy must be I x O");
  if (sigma_y.rows() != output_dim || sigma_y.cols() != output_dim)
    throw DimensionMismatch("sigma_y must be O x O");
  if (mean_x.size() != input_dim) throw DimensionMismatch("mean_x must have length I");
  if (mean_y.size() != output_dim) throw DimensionMismatch("mean_y must have length O");
  if (!sigma_x.allFinite() || !sigma_xy.allFinite() || !sigma_y.allFinite() ||
      !mean_x.allFinite() || !mean_y.allFinite())
    throw InvalidParameter("task moments must be finite");
  check_symmetric_psd(sigma_x, "sigma_x");
  check_symmetric_psd(sigma_y, "sigma_y");
}

TaskMoments two_gaussian_moments(const TwoGaussianTask& task) {
  if (!(task.sigma_x_noise > 0.0)) throw InvalidParameter("two-gaussian sigma must be > 0");
  TaskMoments m;
  m.input_dim = 1;
  m.output_dim = 1;
  m.sigma_x = Mat::Constant(1, 1, task.mu_x * task.mu_x + task.sigma_x_noise * task.sigma_x_noise);
  m.sigma_xy = Mat::Constant(1, 1, task.mu_x);
  m.sigma_y = Mat::Constant(1, 1, 1.0);
  m.mean_x = Vec::Zero(1);
  m.mean_y = Vec::Zero(1);
  m.source = std::make_shared<TwoGaussianSource>(task);
  return m;
}

TaskMoments correlated_gaussian_moments(const CorrelatedGaussianTask& t) {
  if (!(t.s1 > 0.0) || !(t.s2 > 0.0)) throw InvalidParameter("correlated-gaussian sigmas must be > 0");
  if (!(t.p >= 0.0 && t.p <= 1.0)) throw InvalidParameter("correlated-gaussian p must lie in [0, 1]");
  const double c = 1.0 - 2.0 * t.p;
  TaskMoments m;
  m.input_dim = 2;
  m.output_dim = 2;
  m.sigma_x.resize(2, 2);
  m.sigma_x << t.mu1 * t.mu1 + t.s1 * t.s1, t.mu1 * t.mu2 * c,
               t.mu1 * t.mu2 * c, t.mu2 * t.mu2 + t.s2 * t.s2;
  m.sigma_xy.resize(2, 2);
  m.sigma_xy << t.mu1, t.mu1 * c,
                t.mu2 * c, t.mu2;
  m.sigma_y.resize(2, 2);
  m.sigma_y << 1.0, c,
               c, 1.0;
  m.mean_x = Vec::Zero(2);
  m.mean_y = Vec::Zero(2);
  m.source = std::make_shared<CorrelatedGaussianSource>(t);
  return m;
}

Mat semantic_membership(int levels) {
  if (levels < 1) throw InvalidParameter("semantic hierarchy needs at least one level");
  if (levels > 20) throw InvalidParameter("semantic hierarchy too deep");
  const int leaves = 1 << (levels - 1);
  const int nodes = (1 << levels) - 1;
  Mat p = Mat::Zero(nodes, leaves);
  int row = 0;
  for (int level = 0; level < levels; ++level) {
    const int groups = 1 << level;
    const int width = leaves / groups;
    for (int g = 0; g < groups; ++g, ++row) p.row(row).segment(g * width, width).setOnes();
  }
  return p;
}

TaskMoments semantic_moments(int levels) {
  const Mat p = semantic_membership(levels);
  const auto leaves = static_cast<int>(p.cols());
  TaskMoments m;
  m.input_dim = leaves;
  m.output_dim = static_cast<int>(p.rows());
  m.sigma_x = Mat::Identity(leaves, leaves);
  m.sigma_xy = p.transpose();
  m.sigma_y = p * p.transpose();
  m.mean_x = Vec::Constant(leaves, 1.0 / leaves);
  m.mean_y = p.rowwise().mean();
  m.source = std::make_shared<SemanticSource>(p);
  return m;
}

TaskMoments with_bias(const TaskMoments& t) {
  const int n = t.input_dim;
  TaskMoments m;
  m.input_dim = n + 1;
  m.output_dim = t.output_dim;
  m.sigma_x.resize(n + 1, n + 1);
  m.sigma_x.topLeftCorner(n, n) = t.sigma_x;
  m.sigma_x.topRightCorner(n, 1) = t.mean_x;
  m.sigma_x.bottomLeftCorner(1, n) = t.mean_x.transpose();
  m.sigma_x(n, n) = 1.0;
  m.sigma_xy.resize(n + 1, t.output_dim);
  m.sigma_xy.topRows(n) = t.sigma_xy;
  m.sigma_xy.row(n) = t.mean_y.transpose();
  m.sigma_y = t.sigma_y;
  m.mean_x.resize(n + 1);
  m.mean_x.head(n) = t.mean_x;
  m.mean_x(n) = 1.0;
  m.mean_y = t.mean_y;
  if (t.source) m.source = std::make_shared<BiasSource>(t.source);
  return m;
}

BlockTaskSet compose_block_tasks(const std::vector<TaskMoments>& tasks, bool cross_means) {
  if (tasks.empty()) throw InvalidParameter("compose_block_tasks needs at least one task");
  BlockTaskSet set;
  set.tasks = tasks;
  int in_total = 0, out_total = 0;
  for (const auto& t : tasks) {
    t.validate();
    set.input_offset.push_back(in_total);
    set.output_offset.push_back(out_total);
    in_total += t.input_dim;
    out_total += t.output_dim;
  }
  TaskMoments& c = set.combined;
  c.input_dim = in_total;
  c.output_dim = out_total;
  c.sigma_x = Mat::Zero(in_total, in_total);
  c.sigma_xy = Mat::Zero(in_total, out_total);
  c.sigma_y = Mat::Zero(out_total, out_total);
  c.mean_x.resize(in_total);
  c.mean_y.resize(out_total);
  const auto n = tasks.size();
  for (size_t a = 0; a < n; ++a) {
    const auto& ta = tasks[a];
    const int ia = set.input_offset[a], oa = set.output_offset[a];
    c.mean_x.segment(ia, ta.input_dim) = ta.mean_x;
    c.mean_y.segment(oa, ta.output_dim) = ta.mean_y;
    for (size_t b = 0; b < n; ++b) {
      const auto& tb = tasks[b];
      const int ib = set.input_offset[b], ob = set.output_offset[b];
      if (a == b) {
        c.sigma_x.block(ia, ia, ta.input_dim, ta.input_dim) = ta.sigma_x;
        c.sigma_xy.block(ia, oa, ta.input_dim, ta.output_dim) = ta.sigma_xy;
        c.sigma_y.block(oa, oa, ta.output_dim, ta.output_dim) = ta.sigma_y;
      } else if (cross_means) {
        c.sigma_x.block(ia, ib, ta.input_dim, tb.input_dim) = ta.mean_x * tb.mean_x.transpose();
        c.sigma_xy.block(ia, ob, ta.input_dim, tb.output_dim) = ta.mean_x * tb.mean_y.transpose();
        c.sigma_y.block(oa, ob, ta.output_dim, tb.output_dim) = ta.mean_y * tb.mean_y.transpose();
      }
    }
  }
  bool all_sampleable = cross_means;
  for (const auto& t : tasks) all_sampleable = all_sampleable && t.sampleable();
  if (all_sampleable) {
    std::vector<std::shared_ptr<const SampleSource>> parts;
    std::vector<int> in_dims, out_dims;
    for (const auto& t : tasks) {
      parts.push_back(t.source);
      in_dims.push_back(t.input_dim);
      out_dims.push_back(t.output_dim);
    }
    c.source = std::make_shared<BlockSource>(std::move(parts), std::move(in_dims), std::move(out_dims));
  }
  return set;
}

Mat BlockTaskSet::padded_sigma_xy(int tau) const {
  if (tau < 0 || tau >= size()) throw InvalidParameter("task index out of range");
  Mat out = Mat::Zero(combined.input_dim, combined.output_dim);
  const int o = output_offset[static_cast<size_t>(tau)];
  const int w = tasks[static_cast<size_t>(tau)].output_dim;
  out.middleCols(o, w) = combined.sigma_xy.middleCols(o, w);
  return out;
}

TaskMoments BlockTaskSet::block(int tau) const {
  if (tau < 0 || tau >= size()) throw InvalidParameter("task index out of range");
  const auto k = static_cast<size_t>(tau);
  const int i = input_offset[k], o = output_offset[k];
  const int ni = tasks[k].input_dim, no = tasks[k].output_dim;
  TaskMoments m;
  m.input_dim = ni;
  m.output_dim = no;
  m.sigma_x = combined.sigma_x.block(i, i, ni, ni);
  m.sigma_xy = combined.sigma_xy.block(i, o, ni, no);
  m.sigma_y = combined.sigma_y.block(o, o, no, no);
  m.mean_x = combined.mean_x.segment(i, ni);
  m.mean_y = combined.mean_y.segment(o, no);
  m.source = tasks[k].source;
  return m;
}

std::vector<int> BlockTaskSet::output_group() const {
  std::vector<int> g;
  for (int t = 0; t < size(); ++t)
    for (int k = 0; k < tasks[static_cast<size_t>(t)].output_dim; ++k) g.push_back(t);
  return g;
}

std::pair<Mat, Mat> sample_batch(const TaskMoments& task, int batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw InvalidParameter("batch_size must be >= 1");
  if (!task.source) throw UnsupportedOperation("task has moments only; sampling is unavailable");
  std::mt19937_64 rng(seed);
  Mat x, y;
  task.source->sample(batch_size, rng, x, y);
  return {std::move(x), std::move(y)};
}

TaskMoments empirical_moments(const Mat& x, const Mat& y) {
  if (x.cols() != y.cols()) throw DimensionMismatch("x and y sample counts differ");
  if (x.cols() == 0) throw EmptyData("no samples");
  const double inv = 1.0 / static_cast<double>(x.cols());
  TaskMoments m;
  m.input_dim = static_cast<int>(x.rows());
  m.output_dim = static_cast<int>(y.rows());
  m.sigma_x = (x * x.transpose()) * inv;
  m.sigma_xy = (x * y.transpose()) * inv;
  m.sigma_y = (y * y.transpose()) * inv;
  m.sigma_x = 0.5 * (m.sigma_x + m.sigma_x.transpose()).eval();
  m.sigma_y = 0.5 * (m.sigma_y + m.sigma_y.transpose()).eval();
  m.mean_x = x.rowwise().mean();
  m.mean_y = y.rowwise().mean();
  return m;
}

nlohmann::json moments_to_json(const TaskMoments& t) {
  nlohmann::json j;
  j["input_dim"] = t.input_dim;
  j["output_dim"] = t.output_dim;
  j["sigma_x"] = mat_to_json(t.sigma_x);
  j["sigma_xy"] = mat_to_json(t.sigma_xy);
  j["sigma_y"] = mat_to_json(t.sigma_y);
  j["mean_x"] = vec_to_json(t.mean_x);
  j["mean_y"] = vec_to_json(t.mean_y);
  return j;
}

TaskMoments moments_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("moments: expected a JSON object");
  for (const char* key : {"input_dim", "output_dim", "sigma_x", "sigma_xy", "sigma_y", "mean_x", "mean_y"}) {
    if (!j.contains(key)) throw FormatError(std::string("moments: missing key ") + key);
  }
  TaskMoments t;
  t.input_dim = j["input_dim"].get<int>();
  t.output_dim = j["output_dim"].get<int>();
  t.sigma_x = mat_from_json(j["sigma_x"], "sigma_x");
  t.sigma_xy = mat_from_json(j["sigma_xy"], "sigma_xy");
  t.sigma_y = mat_from_json(j["sigma_y"], "sigma_y");
  t.mean_x = vec_from_json(j["mean_x"], "mean_x");
  t.mean_y = vec_from_json(j["mean_y"], "mean_y");
  t.validate();
  return t;
}

TaskMoments load_moments(const std::string& path) { return moments_from_json(read_json_file(path)); }

void save_moments(const TaskMoments& task, const std::string& path) {
  write_text_file(path, dump_json(moments_to_json(task)));
}

}  // namespace effort
