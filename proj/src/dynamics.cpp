#include "effort/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "effort/errors.hpp"
#include "effort/expm.hpp"
#include "effort/json_util.hpp"

namespace effort {

namespace {

using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;

double tanh_f(double x) { return std::tanh(x); }
double tanh_df(double x) {
  const double t = std::tanh(x);
  return 1.0 - t * t;
}
double tanh_ddf(double x) {
  const double t = std::tanh(x);
  return -2.0 * t * (1.0 - t * t);
}
double id_f(double x) { return x; }
double id_df(double) { return 1.0; }
double id_ddf(double) { return 0.0; }

Mat ones(Eigen::Index r, Eigen::Index c) { return Mat::Ones(r, c); }

// Gains for the layers of a two-layer network, from a full (G1, G2) control
// or from basis coefficients.
struct GainLayout {
  int h = 0, in = 0, out = 0;
  std::optional<NeuronBasis> basis;

  int size() const { return basis ? basis->basis_size() : h * in + out * h; }

  void expand(std::span<const double> g, Mat& gt1, Mat& gt2) const {
    gt1 = ones(h, in);
    gt2 = ones(out, h);
    if (g.empty()) return;
    if (basis) {
      Mat& target = basis->layer == BasisLayer::first ? gt1 : gt2;
      target += expand_basis(g, *basis);
      return;
    }
    gt1 += ConstRowMap(g.data(), h, in);
    gt2 += ConstRowMap(g.data() + h * in, out, h);
  }

  void contract(const Mat& bgt1, const Mat& bgt2, std::span<double> bar_g) const {
    if (bar_g.empty()) return;
    if (basis) {
      const Vec b = basis_adjoint(basis->layer == BasisLayer::first ? bgt1 : bgt2, *basis);
      for (Eigen::Index k = 0; k < b.size(); ++k) bar_g[static_cast<size_t>(k)] += b(k);
      return;
    }
    RowMap(bar_g.data(), h, in) += bgt1;
    RowMap(bar_g.data() + h * in, out, h) += bgt2;
  }
};

void check_width(std::span<const double> g, int expected) {
  if (!g.empty() && static_cast<int>(g.size()) != expected)
    throw DimensionMismatch("control width " + std::to_string(g.size()) + " does not match model width " +
                            std::to_string(expected));
}

// Linear two-layer network. Every two-layer variant runs the same kernel with
// neutral values for the parts it does not control, so G = 0, psi = 1,
// phi = 1 and rho = 0 all reproduce the baseline bit for bit.
class TwoLayerModel final : public Model {
 public:
  enum class Mode { baseline, gain, engagement, category, lr };

  TwoLayerModel(Mode mode, const DynamicsSpec& spec, const TaskContext& ctx) : mode_(mode) {
    layout_.h = static_cast<int>(spec.init.w1.rows());
    layout_.in = static_cast<int>(spec.init.w1.cols());
    layout_.out = static_cast<int>(spec.init.w2.rows());
    layout_.basis = spec.basis;
    c_ = spec.dt / spec.tau_w;
    lambda_ = spec.lambda;
    if (mode_ == Mode::engagement) {
      group_ = ctx.output_group;
      if (static_cast<int>(group_.size()) != layout_.out)
        throw DimensionMismatch("engagement needs a dataset index for every output");
      groups_ = *std::max_element(group_.begin(), group_.end()) + 1;
    }
  }

  int control_size() const override {
    switch (mode_) {
      case Mode::baseline: return 0;
      case Mode::gain: return layout_.size();
      case Mode::engagement: return groups_;
      case Mode::category: return layout_.out;
      case Mode::lr: return 1;
    }
    return 0;
  }

  struct Ctl {
    Mat gt1, gt2;
    Vec d;
    double r = 1.0;
  };

  Ctl expand(std::span<const double> g) const {
    check_width(g, control_size());
    Ctl k;
    k.d = Vec::Ones(layout_.out);
    if (mode_ == Mode::gain) {
      layout_.expand(g, k.gt1, k.gt2);
    } else {
      k.gt1 = ones(layout_.h, layout_.in);
      k.gt2 = ones(layout_.out, layout_.h);
    }
    if (g.empty()) return k;
    if (mode_ == Mode::engagement) {
      for (int o = 0; o < layout_.out; ++o) k.d(o) = g[static_cast<size_t>(group_[static_cast<size_t>(o)])];
    } else if (mode_ == Mode::category) {
      for (int o = 0; o < layout_.out; ++o) k.d(o) = g[static_cast<size_t>(o)] * g[static_cast<size_t>(o)];
    } else if (mode_ == Mode::lr) {
      if (!(g[0] > -1.0)) throw InvalidParameter("learning-rate modulation needs rho > -1");
      k.r = 1.0 + g[0];
    }
    return k;
  }

  void contract(std::span<const double> g, const Mat& bgt1, const Mat& bgt2, const Vec& bd, double br,
                std::span<double> bar_g) const {
    if (bar_g.empty() || g.empty()) return;
    switch (mode_) {
      case Mode::baseline: break;
      case Mode::gain: layout_.contract(bgt1, bgt2, bar_g); break;
      case Mode::engagement:
        for (int o = 0; o < layout_.out; ++o) bar_g[static_cast<size_t>(group_[static_cast<size_t>(o)])] += bd(o);
        break;
      case Mode::category:
        for (int o = 0; o < layout_.out; ++o) bar_g[static_cast<size_t>(o)] += 2.0 * g[static_cast<size_t>(o)] * bd(o);
        break;
      case Mode::lr: bar_g[0] += br; break;
    }
  }

  void step(const NetState& w, std::span<const double> g, const StepMoments& m, NetState& out) const override {
    const Ctl k = expand(g);
    const Mat a1 = k.gt1.cwiseProduct(w.w1);
    const Mat a2 = k.gt2.cwiseProduct(w.w2);
    const Mat e = m.syx - a2 * (a1 * m.sx);
    const Mat f = k.d.asDiagonal() * e;
    const Mat p1 = a2.transpose() * f;
    const Mat p2 = f * a1.transpose();
    const double cr = c_ * k.r;
    out.w1 = w.w1 + cr * (p1.cwiseProduct(k.gt1) - lambda_ * w.w1);
    out.w2 = w.w2 + cr * (p2.cwiseProduct(k.gt2) - lambda_ * w.w2);
  }

  double loss(const NetState& w, std::span<const double> g, const StepMoments& m) const override {
    const Ctl k = expand(g);
    const Mat prod = k.gt2.cwiseProduct(w.w2) * k.gt1.cwiseProduct(w.w1);
    const double fit = m.tr_sy - 2.0 * prod.cwiseProduct(m.syx).sum() + prod.cwiseProduct(prod * m.sx).sum();
    return 0.5 * fit + 0.5 * lambda_ * (w.w1.squaredNorm() + w.w2.squaredNorm());
  }

  void step_vjp(const NetState& w, std::span<const double> g, const StepMoments& m, const NetState& bar_next,
                NetState& bar_w, std::span<double> bar_g) const override {
    const Ctl k = expand(g);
    const Mat a1 = k.gt1.cwiseProduct(w.w1);
    const Mat a2 = k.gt2.cwiseProduct(w.w2);
    const Mat a1sx = a1 * m.sx;
    const Mat e = m.syx - a2 * a1sx;
    const Mat f = k.d.asDiagonal() * e;
    const Mat p1 = a2.transpose() * f;
    const Mat p2 = f * a1.transpose();
    const Mat& b1 = bar_next.w1;
    const Mat& b2 = bar_next.w2;
    const double cr = c_ * k.r;

    const double br = c_ * (b1.cwiseProduct(p1.cwiseProduct(k.gt1) - lambda_ * w.w1).sum() +
                            b2.cwiseProduct(p2.cwiseProduct(k.gt2) - lambda_ * w.w2).sum());
    const Mat dp1 = cr * b1.cwiseProduct(k.gt1);
    const Mat dp2 = cr * b2.cwiseProduct(k.gt2);
    Mat bgt1 = cr * b1.cwiseProduct(p1);
    Mat bgt2 = cr * b2.cwiseProduct(p2);

    Mat da2 = f * dp1.transpose();
    Mat da1 = dp2.transpose() * f;
    const Mat df = a2 * dp1 + dp2 * a1;
    const Mat de = k.d.asDiagonal() * df;
    const Vec bd = df.cwiseProduct(e).rowwise().sum();
    da2.noalias() -= de * a1sx.transpose();
    da1.noalias() -= a2.transpose() * de * m.sx;

    bar_w.w1 = (1.0 - cr * lambda_) * b1 + da1.cwiseProduct(k.gt1);
    bar_w.w2 = (1.0 - cr * lambda_) * b2 + da2.cwiseProduct(k.gt2);
    bgt1 += da1.cwiseProduct(w.w1);
    bgt2 += da2.cwiseProduct(w.w2);
    contract(g, bgt1, bgt2, bd, br, bar_g);
  }

  void loss_vjp(const NetState& w, std::span<const double> g, const StepMoments& m, double scale, NetState& bar_w,
                std::span<double> bar_g) const override {
    const Ctl k = expand(g);
    const Mat a1 = k.gt1.cwiseProduct(w.w1);
    const Mat a2 = k.gt2.cwiseProduct(w.w2);
    const Mat dk = scale * (a2 * a1 * m.sx - m.syx);
    const Mat da2 = dk * a1.transpose();
    const Mat da1 = a2.transpose() * dk;
    bar_w.w1 += scale * lambda_ * w.w1 + da1.cwiseProduct(k.gt1);
    bar_w.w2 += scale * lambda_ * w.w2 + da2.cwiseProduct(k.gt2);
    if (mode_ == Mode::gain)
      contract(g, da1.cwiseProduct(w.w1), da2.cwiseProduct(w.w2), Vec(), 0.0, bar_g);
  }

 private:
  Mode mode_;
  GainLayout layout_;
  std::vector<int> group_;
  int groups_ = 0;
  double c_ = 0.0;
  double lambda_ = 0.0;
};

// One weight matrix W (O x I) with gain G; the single neuron is the 1 x 1 case.
class SingleLayerModel final : public Model {
 public:
  explicit SingleLayerModel(const DynamicsSpec& spec)
      : rows_(static_cast<int>(spec.init.w1.rows())),
        cols_(static_cast<int>(spec.init.w1.cols())),
        c_(spec.dt / spec.tau_w),
        lambda_(spec.lambda) {}

  int control_size() const override { return rows_ * cols_; }

  Mat gain(std::span<const double> g) const {
    check_width(g, control_size());
    Mat gt = ones(rows_, cols_);
    if (!g.empty()) gt += ConstRowMap(g.data(), rows_, cols_);
    return gt;
  }

  void step(const NetState& w, std::span<const double> g, const StepMoments& m, NetState& out) const override {
    const Mat gt = gain(g);
    const Mat e = m.syx - gt.cwiseProduct(w.w1) * m.sx;
    out.w1 = w.w1 + c_ * (e.cwiseProduct(gt) - lambda_ * w.w1);
    out.w2.resize(0, 0);
  }

  double loss(const NetState& w, std::span<const double> g, const StepMoments& m) const override {
    const Mat a = gain(g).cwiseProduct(w.w1);
    const double fit = m.tr_sy - 2.0 * a.cwiseProduct(m.syx).sum() + a.cwiseProduct(a * m.sx).sum();
    return 0.5 * fit + 0.5 * lambda_ * w.w1.squaredNorm();
  }

  void step_vjp(const NetState& w, std::span<const double> g, const StepMoments& m, const NetState& bar_next,
                NetState& bar_w, std::span<double> bar_g) const override {
    const Mat gt = gain(g);
    const Mat e = m.syx - gt.cwiseProduct(w.w1) * m.sx;
    const Mat q = c_ * bar_next.w1;
    const Mat de = q.cwiseProduct(gt);
    const Mat da = -de * m.sx;
    bar_w.w1 = (1.0 - c_ * lambda_) * bar_next.w1 + da.cwiseProduct(gt);
    bar_w.w2.resize(0, 0);
    if (!g.empty() && !bar_g.empty())
      RowMap(bar_g.data(), rows_, cols_) += q.cwiseProduct(e) + da.cwiseProduct(w.w1);
  }

  void loss_vjp(const NetState& w, std::span<const double> g, const StepMoments& m, double scale, NetState& bar_w,
                std::span<double> bar_g) const override {
    const Mat gt = gain(g);
    const Mat da = scale * (gt.cwiseProduct(w.w1) * m.sx - m.syx);
    bar_w.w1 += scale * lambda_ * w.w1 + da.cwiseProduct(gt);
    if (!g.empty() && !bar_g.empty()) RowMap(bar_g.data(), rows_, cols_) += da.cwiseProduct(w.w1);
  }

 private:
  int rows_, cols_;
  double c_, lambda_;
};

// Two-layer network with hidden nonlinearity f, linearized around the input
// mean: h ~ f(z) + J (x - mx), z = A1 mx, J = diag(f'(z)) A1.
class NonlinearTaylorModel final : public Model {
 public:
  NonlinearTaylorModel(const DynamicsSpec& spec) : f_(spec.nonlinearity) {
    layout_.h = static_cast<int>(spec.init.w1.rows());
    layout_.in = static_cast<int>(spec.init.w1.cols());
    layout_.out = static_cast<int>(spec.init.w2.rows());
    layout_.basis = spec.basis;
    c_ = spec.dt / spec.tau_w;
    lambda_ = spec.lambda;
  }

  int control_size() const override { return layout_.size(); }

  struct Fwd {
    Mat gt1, gt2, a1, a2, j, mh, myh, mhx;
    Vec z, a, d;
  };

  Fwd forward(const NetState& w, std::span<const double> g, const StepMoments& m) const {
    check_width(g, control_size());
    Fwd s;
    layout_.expand(g, s.gt1, s.gt2);
    s.a1 = s.gt1.cwiseProduct(w.w1);
    s.a2 = s.gt2.cwiseProduct(w.w2);
    s.z = s.a1 * m.mx;
    s.a = s.z.unaryExpr(f_.f);
    s.d = s.z.unaryExpr(f_.df);
    s.j = s.d.asDiagonal() * s.a1;
    const Mat jcx = s.j * m.cx;
    s.mh = s.a * s.a.transpose() + jcx * s.j.transpose();
    s.myh = m.my * s.a.transpose() + m.cyx * s.j.transpose();
    s.mhx = s.a * m.mx.transpose() + jcx;
    return s;
  }

  void step(const NetState& w, std::span<const double> g, const StepMoments& m, NetState& out) const override {
    const Fwd s = forward(w, g, m);
    const Mat p2 = s.myh - s.a2 * s.mh;
    const Mat r = m.syx - s.a2 * s.mhx;
    const Mat p1 = s.d.asDiagonal() * (s.a2.transpose() * r);
    out.w1 = w.w1 + c_ * (p1.cwiseProduct(s.gt1) - lambda_ * w.w1);
    out.w2 = w.w2 + c_ * (p2.cwiseProduct(s.gt2) - lambda_ * w.w2);
  }

  double loss(const NetState& w, std::span<const double> g, const StepMoments& m) const override {
    const Fwd s = forward(w, g, m);
    const double fit =
        m.tr_sy - 2.0 * s.a2.cwiseProduct(s.myh).sum() + s.a2.cwiseProduct(s.a2 * s.mh).sum();
    return 0.5 * fit + 0.5 * lambda_ * (w.w1.squaredNorm() + w.w2.squaredNorm());
  }

  // Pulls adjoints of the moment blocks (and of D) back to A1.
  void backprop_moments(const Fwd& s, const StepMoments& m, const Mat& bmh, const Mat& bmyh, const Mat& bmhx,
                        Vec bd, Mat& da1) const {
    const Mat sym = bmh + bmh.transpose();
    const Mat bj = bmhx * m.cx + bmyh.transpose() * m.cyx + sym * s.j * m.cx;
    const Vec ba = bmhx * m.mx + bmyh.transpose() * m.my + sym * s.a;
    bd += bj.cwiseProduct(s.a1).rowwise().sum();
    da1 += s.d.asDiagonal() * bj;
    const Vec bz = ba.cwiseProduct(s.d) + bd.cwiseProduct(s.z.unaryExpr(f_.ddf));
    da1 += bz * m.mx.transpose();
  }

  void step_vjp(const NetState& w, std::span<const double> g, const StepMoments& m, const NetState& bar_next,
                NetState& bar_w, std::span<double> bar_g) const override {
    const Fwd s = forward(w, g, m);
    const Mat p2 = s.myh - s.a2 * s.mh;
    const Mat r = m.syx - s.a2 * s.mhx;
    const Mat sr = s.a2.transpose() * r;
    const Mat p1 = s.d.asDiagonal() * sr;
    const Mat& b1 = bar_next.w1;
    const Mat& b2 = bar_next.w2;

    const Mat dp1 = c_ * b1.cwiseProduct(s.gt1);
    const Mat dp2 = c_ * b2.cwiseProduct(s.gt2);
    Mat bgt1 = c_ * b1.cwiseProduct(p1);
    Mat bgt2 = c_ * b2.cwiseProduct(p2);

    Mat da2 = -dp2 * s.mh;
    const Mat bmh = -s.a2.transpose() * dp2;
    const Mat& bmyh = dp2;
    const Vec bd = dp1.cwiseProduct(sr).rowwise().sum();
    const Mat bs = s.d.asDiagonal() * dp1;
    da2 += r * bs.transpose();
    const Mat br = s.a2 * bs;
    da2 -= br * s.mhx.transpose();
    const Mat bmhx = -s.a2.transpose() * br;

    Mat da1 = Mat::Zero(s.a1.rows(), s.a1.cols());
    backprop_moments(s, m, bmh, bmyh, bmhx, bd, da1);

    bar_w.w1 = (1.0 - c_ * lambda_) * b1 + da1.cwiseProduct(s.gt1);
    bar_w.w2 = (1.0 - c_ * lambda_) * b2 + da2.cwiseProduct(s.gt2);
    bgt1 += da1.cwiseProduct(w.w1);
    bgt2 += da2.cwiseProduct(w.w2);
    if (!g.empty()) layout_.contract(bgt1, bgt2, bar_g);
  }

  void loss_vjp(const NetState& w, std::span<const double> g, const StepMoments& m, double scale, NetState& bar_w,
                std::span<double> bar_g) const override {
    const Fwd s = forward(w, g, m);
    const Mat da2 = scale * (s.a2 * s.mh - s.myh);
    const Mat bmyh = -scale * s.a2;
    const Mat bmh = 0.5 * scale * s.a2.transpose() * s.a2;
    const Mat bmhx = Mat::Zero(s.mhx.rows(), s.mhx.cols());
    Mat da1 = Mat::Zero(s.a1.rows(), s.a1.cols());
    backprop_moments(s, m, bmh, bmyh, bmhx, Vec::Zero(s.d.size()), da1);
    bar_w.w1 += scale * lambda_ * w.w1 + da1.cwiseProduct(s.gt1);
    bar_w.w2 += scale * lambda_ * w.w2 + da2.cwiseProduct(s.gt2);
    if (!g.empty()) layout_.contract(da1.cwiseProduct(w.w1), da2.cwiseProduct(w.w2), bar_g);
  }

  const GainLayout& layout() const { return layout_; }
  const Nonlinearity& nonlinearity() const { return f_; }
  double rate() const { return c_; }
  double lambda() const { return lambda_; }

 private:
  GainLayout layout_;
  Nonlinearity f_;
  double c_ = 0.0;
  double lambda_ = 0.0;
};

void check_two_layer_dims(const DynamicsSpec& spec, const TaskContext& ctx) {
  const auto& w = spec.init;
  if (w.w1.cols() != ctx.input_dim() || w.w2.rows() != ctx.output_dim() || w.w1.rows() != w.w2.cols())
    throw DimensionMismatch("initial weights do not match task dimensions (W1 is H x I, W2 is O x H)");
}

void check_single_layer_dims(const DynamicsSpec& spec, const TaskContext& ctx) {
  const auto& w = spec.init;
  if (w.w2.size() != 0 || w.w1.rows() != ctx.output_dim() || w.w1.cols() != ctx.input_dim())
    throw DimensionMismatch("single-layer weights must be O x I with no second layer");
}

StepMoments empirical_step_moments(const Mat& x, const Mat& y) {
  const double inv = 1.0 / static_cast<double>(x.cols());
  StepMoments m;
  m.sx = x * x.transpose() * inv;
  m.syx = y * x.transpose() * inv;
  m.tr_sy = y.squaredNorm() * inv;
  m.mx = x.rowwise().mean();
  m.my = y.rowwise().mean();
  m.cx = m.sx - m.mx * m.mx.transpose();
  m.cyx = m.syx - m.my * m.mx.transpose();
  return m;
}

void record_aux(Trajectory& t, const NetState& w, std::span<const double> g) {
  t.w1_l1.push_back(w.w1.size() ? w.w1.cwiseAbs().sum() : 0.0);
  t.w1_l2.push_back(w.w1.norm());
  t.w2_l1.push_back(w.w2.size() ? w.w2.cwiseAbs().sum() : 0.0);
  t.w2_l2.push_back(w.w2.norm());
  double s = 0.0;
  for (double v : g) s += v * v;
  t.g_l2.push_back(std::sqrt(s));
}

}  // namespace

std::string to_string(DynamicsKind kind) {
  switch (kind) {
    case DynamicsKind::single_neuron: return "single_neuron";
    case DynamicsKind::single_layer: return "single_layer";
    case DynamicsKind::two_layer_baseline: return "two_layer_baseline";
    case DynamicsKind::gain_mod: return "gain_mod";
    case DynamicsKind::engagement: return "engagement";
    case DynamicsKind::category_engagement: return "category_engagement";
    case DynamicsKind::lr_mod: return "lr_mod";
    case DynamicsKind::nonlinear_taylor: return "nonlinear_taylor";
  }
  return "?";
}

DynamicsKind dynamics_kind_from_string(const std::string& s) {
  for (auto k : {DynamicsKind::single_neuron, DynamicsKind::single_layer, DynamicsKind::two_layer_baseline,
                 DynamicsKind::gain_mod, DynamicsKind::engagement, DynamicsKind::category_engagement,
                 DynamicsKind::lr_mod, DynamicsKind::nonlinear_taylor}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown dynamics kind: " + s);
}

Nonlinearity Nonlinearity::tanh() { return {"tanh", tanh_f, tanh_df, tanh_ddf}; }
Nonlinearity Nonlinearity::identity() { return {"identity", id_f, id_df, id_ddf}; }
Nonlinearity Nonlinearity::from_name(const std::string& name) {
  if (name == "tanh") return tanh();
  if (name == "identity" || name == "linear") return identity();
  throw ConfigError("unknown nonlinearity: " + name);
}

void DynamicsSpec::validate() const {
  if (!(tau_w > 0.0)) throw InvalidParameter("tau_w must be positive");
  if (!(lambda >= 0.0)) throw InvalidParameter("lambda must be non-negative");
  if (!(dt > 0.0)) throw InvalidParameter("dt must be positive");
  if (steps < 0) throw InvalidParameter("steps must be non-negative");
  if (!init.all_finite()) throw InvalidParameter("initial weights must be finite");
  if (!(rho_min > -1.0)) throw InvalidParameter("rho_min must exceed -1");
}

TaskContext TaskContext::single(TaskMoments task) {
  TaskContext c;
  c.tasks.push_back(std::move(task));
  return c;
}

TaskContext TaskContext::engagement(const BlockTaskSet& blocks) {
  TaskContext c;
  c.tasks.push_back(blocks.combined);
  c.output_group = blocks.output_group();
  return c;
}

int TaskContext::active(int step) const {
  if (switch_period <= 0 || tasks.size() <= 1) return 0;
  return (step / switch_period) % static_cast<int>(tasks.size());
}

StepMoments StepMoments::from(const TaskMoments& task) {
  StepMoments m;
  m.sx = task.sigma_x;
  m.syx = task.sigma_xy.transpose();
  m.tr_sy = task.sigma_y.trace();
  m.mx = task.mean_x;
  m.my = task.mean_y;
  m.cx = m.sx - m.mx * m.mx.transpose();
  m.cyx = m.syx - m.my * m.mx.transpose();
  return m;
}

std::unique_ptr<Model> make_model(const DynamicsSpec& spec, const TaskContext& ctx) {
  spec.validate();
  if (ctx.tasks.empty()) throw InvalidParameter("no task supplied");
  for (const auto& t : ctx.tasks) {
    t.validate();
    if (t.input_dim != ctx.input_dim() || t.output_dim != ctx.output_dim())
      throw DimensionMismatch("alternating tasks must share dimensions");
  }
  if (spec.basis && spec.kind != DynamicsKind::gain_mod && spec.kind != DynamicsKind::nonlinear_taylor)
    throw InvalidParameter("a neuron basis only applies to gain modulation");
  using Mode = TwoLayerModel::Mode;
  switch (spec.kind) {
    case DynamicsKind::single_neuron:
      if (!spec.init.is_scalar() || ctx.input_dim() != 1 || ctx.output_dim() != 1)
        throw DimensionMismatch("single neuron needs a 1 x 1 task and a scalar weight");
      return std::make_unique<SingleLayerModel>(spec);
    case DynamicsKind::single_layer:
      check_single_layer_dims(spec, ctx);
      return std::make_unique<SingleLayerModel>(spec);
    case DynamicsKind::nonlinear_taylor:
      check_two_layer_dims(spec, ctx);
      if (spec.nonlinearity.f == nullptr) throw InvalidParameter("nonlinearity not set");
      return std::make_unique<NonlinearTaylorModel>(spec);
    default: break;
  }
  check_two_layer_dims(spec, ctx);
  if (spec.basis) {
    const auto& b = *spec.basis;
    const auto& w = b.layer == BasisLayer::first ? spec.init.w1 : spec.init.w2;
    if (b.rows != w.rows() || b.cols != w.cols()) throw DimensionMismatch("basis shape does not match its layer");
  }
  switch (spec.kind) {
    case DynamicsKind::two_layer_baseline: return std::make_unique<TwoLayerModel>(Mode::baseline, spec, ctx);
    case DynamicsKind::gain_mod: return std::make_unique<TwoLayerModel>(Mode::gain, spec, ctx);
    case DynamicsKind::engagement: return std::make_unique<TwoLayerModel>(Mode::engagement, spec, ctx);
    case DynamicsKind::category_engagement: return std::make_unique<TwoLayerModel>(Mode::category, spec, ctx);
    case DynamicsKind::lr_mod: return std::make_unique<TwoLayerModel>(Mode::lr, spec, ctx);
    default: break;
  }
  throw InvalidParameter("unsupported dynamics kind");
}

Problem::Problem(DynamicsSpec spec, TaskContext ctx) : spec_(std::move(spec)), ctx_(std::move(ctx)) {
  model_ = make_model(spec_, ctx_);
  if (ctx_.switch_period > 0 && spec_.steps % ctx_.switch_period != 0)
    throw InvalidParameter("switch period must divide the number of steps");
  for (const auto& t : ctx_.tasks) moments_.push_back(StepMoments::from(t));
}

const StepMoments& Problem::moments(int step) const {
  const int s = spec_.steps > 0 ? std::min(step, spec_.steps - 1) : 0;
  return moments_[static_cast<size_t>(ctx_.active(s))];
}

void check_schedule(const Problem& problem, const ControlSchedule& schedule) {
  const int width = schedule.per_step();
  if (schedule.kind == ControlKind::init_weights) {
    const NetState w0 = init_weights_state(schedule);
    const NetState& ref = problem.spec().init;
    if (w0.w1.rows() != ref.w1.rows() || w0.w1.cols() != ref.w1.cols() || w0.w2.rows() != ref.w2.rows() ||
        w0.w2.cols() != ref.w2.cols())
      throw DimensionMismatch("initial-weight control does not match the network shape");
    return;
  }
  if (schedule.steps() != problem.spec().steps)
    throw DimensionMismatch("schedule covers " + std::to_string(schedule.steps()) + " steps, dynamics need " +
                            std::to_string(problem.spec().steps));
  if (width != 0 && width != problem.model().control_size())
    throw DimensionMismatch("schedule width " + std::to_string(width) + " does not match model control width " +
                            std::to_string(problem.model().control_size()));
}

std::span<const double> control_at(const ControlSchedule& schedule, int step) {
  if (schedule.kind == ControlKind::init_weights || schedule.per_step() == 0 || schedule.segments() == 0) return {};
  return schedule.at(step);
}

NetState initial_state(const Problem& problem, const ControlSchedule& schedule) {
  if (schedule.kind == ControlKind::init_weights) return init_weights_state(schedule);
  return problem.spec().init;
}

void check_divergence(const NetState& w, int step) {
  if (!w.all_finite()) throw Diverged("weights became non-finite at step " + std::to_string(step), step);
  if (w.max_abs() > 1e6) throw Diverged("weights exceeded 1e6 at step " + std::to_string(step), step);
}

Trajectory integrate(const Problem& problem, const ControlSchedule& schedule, int stride) {
  if (stride < 1) throw InvalidParameter("checkpoint stride must be >= 1");
  check_schedule(problem, schedule);
  const int n = problem.spec().steps;
  const Model& model = problem.model();
  Trajectory t;
  t.dt = problem.spec().dt;
  t.stride = stride;
  t.loss.reserve(static_cast<size_t>(n) + 1);

  NetState w = initial_state(problem, schedule);
  check_divergence(w, 0);
  NetState next;
  for (int i = 0; i < n; ++i) {
    const auto g = control_at(schedule, i);
    if (i % stride == 0) t.states.push_back(w);
    t.loss.push_back(model.loss(w, g, problem.moments(i)));
    record_aux(t, w, g);
    model.step(w, g, problem.moments(i), next);
    std::swap(w, next);
    check_divergence(w, i + 1);
  }
  const auto g_last = n > 0 ? control_at(schedule, n - 1) : std::span<const double>{};
  t.loss.push_back(model.loss(w, g_last, problem.moments(n)));
  record_aux(t, w, g_last);
  t.states.push_back(w);
  for (int i = 0; i <= n; ++i)
    if (!std::isfinite(t.loss[static_cast<size_t>(i)])) throw Diverged("loss became non-finite", i);
  return t;
}

Trajectory integrate(const DynamicsSpec& spec, const ControlSchedule& schedule, const TaskContext& ctx) {
  return integrate(Problem(spec, ctx), schedule);
}

namespace {

struct NonlinearSgd {
  const NonlinearTaylorModel& model;

  double loss(const NetState& w, std::span<const double> g, const Mat& x, const Mat& y) const {
    Mat gt1, gt2;
    model.layout().expand(g, gt1, gt2);
    const Mat h = (gt1.cwiseProduct(w.w1) * x).unaryExpr(model.nonlinearity().f);
    const Mat r = y - gt2.cwiseProduct(w.w2) * h;
    return 0.5 * r.squaredNorm() / static_cast<double>(x.cols()) +
           0.5 * model.lambda() * (w.w1.squaredNorm() + w.w2.squaredNorm());
  }

  void step(const NetState& w, std::span<const double> g, const Mat& x, const Mat& y, NetState& out) const {
    Mat gt1, gt2;
    model.layout().expand(g, gt1, gt2);
    const Mat a1 = gt1.cwiseProduct(w.w1);
    const Mat a2 = gt2.cwiseProduct(w.w2);
    const Mat z = a1 * x;
    const Mat h = z.unaryExpr(model.nonlinearity().f);
    const double inv = 1.0 / static_cast<double>(x.cols());
    const Mat r = (y - a2 * h) * inv;
    const Mat p2 = r * h.transpose();
    const Mat p1 = (a2.transpose() * r).cwiseProduct(z.unaryExpr(model.nonlinearity().df)) * x.transpose();
    const double c = model.rate(), lam = model.lambda();
    out.w1 = w.w1 + c * (p1.cwiseProduct(gt1) - lam * w.w1);
    out.w2 = w.w2 + c * (p2.cwiseProduct(gt2) - lam * w.w2);
  }
};

}  // namespace

Trajectory simulate_sgd(const Problem& problem, const ControlSchedule& schedule, const SgdOptions& opts) {
  if (opts.batch_size < 1) throw InvalidParameter("batch size must be >= 1");
  check_schedule(problem, schedule);
  const auto& ctx = problem.context();
  for (const auto& task : ctx.tasks)
    if (!task.sampleable()) throw UnsupportedOperation("SGD simulation needs a sampleable task");

  const Model& model = problem.model();
  const auto* nonlinear = dynamic_cast<const NonlinearTaylorModel*>(&model);
  std::optional<NonlinearSgd> nl;
  if (nonlinear) nl.emplace(NonlinearSgd{*nonlinear});

  std::vector<std::pair<Mat, Mat>> eval;
  std::vector<StepMoments> eval_moments;
  if (opts.eval_samples > 0) {
    std::mt19937_64 erng(opts.eval_seed);
    for (const auto& task : ctx.tasks) {
      Mat x, y;
      task.source->sample(opts.eval_samples, erng, x, y);
      eval_moments.push_back(empirical_step_moments(x, y));
      eval.emplace_back(std::move(x), std::move(y));
    }
  }

  const int n = problem.spec().steps;
  std::mt19937_64 rng(opts.seed);
  Trajectory t;
  t.dt = problem.spec().dt;
  NetState w = initial_state(problem, schedule);
  NetState next;
  Mat x, y;

  auto measure = [&](const NetState& state, std::span<const double> g, int task, const Mat& bx, const Mat& by) {
    if (!eval.empty()) {
      const auto& e = eval[static_cast<size_t>(task)];
      return nl ? nl->loss(state, g, e.first, e.second)
                : model.loss(state, g, eval_moments[static_cast<size_t>(task)]);
    }
    return nl ? nl->loss(state, g, bx, by) : model.loss(state, g, empirical_step_moments(bx, by));
  };

  for (int i = 0; i < n; ++i) {
    const auto g = control_at(schedule, i);
    const int task = ctx.active(i);
    ctx.tasks[static_cast<size_t>(task)].source->sample(opts.batch_size, rng, x, y);
    t.states.push_back(w);
    t.loss.push_back(measure(w, g, task, x, y));
    record_aux(t, w, g);
    if (nl) {
      nl->step(w, g, x, y, next);
    } else {
      model.step(w, g, empirical_step_moments(x, y), next);
    }
    std::swap(w, next);
    check_divergence(w, i + 1);
  }
  const auto g_last = n > 0 ? control_at(schedule, n - 1) : std::span<const double>{};
  const int task = ctx.active(n > 0 ? n - 1 : 0);
  ctx.tasks[static_cast<size_t>(task)].source->sample(opts.batch_size, rng, x, y);
  t.loss.push_back(measure(w, g_last, task, x, y));
  record_aux(t, w, g_last);
  t.states.push_back(w);
  return t;
}

double expected_loss(const Problem& problem, const NetState& w, std::span<const double> g, int step) {
  return problem.model().loss(w, g, problem.moments(step));
}

namespace {

DynamicsSpec with_kind(DynamicsSpec spec, DynamicsKind kind, const NetState& w) {
  spec.kind = kind;
  spec.init = w;
  spec.steps = 1;
  return spec;
}

NetState one_step(const DynamicsSpec& spec, const TaskContext& ctx, const NetState& w, std::span<const double> g) {
  const Problem p(spec, ctx);
  NetState out;
  p.model().step(w, g, p.moments(0), out);
  return out;
}

std::vector<double> flatten_pair(const Mat& g1, const Mat& g2) {
  std::vector<double> v(static_cast<size_t>(g1.size() + g2.size()));
  RowMap(v.data(), g1.rows(), g1.cols()) = g1;
  RowMap(v.data() + g1.size(), g2.rows(), g2.cols()) = g2;
  return v;
}

}  // namespace

NetState step_single_neuron(const NetState& w, double g, const TaskMoments& task, const DynamicsSpec& spec) {
  const double gv[] = {g};
  return one_step(with_kind(spec, DynamicsKind::single_neuron, w), TaskContext::single(task), w, gv);
}

NetState step_two_layer_baseline(const NetState& w, const TaskMoments& task, const DynamicsSpec& spec) {
  return one_step(with_kind(spec, DynamicsKind::two_layer_baseline, w), TaskContext::single(task), w, {});
}

NetState step_gain_mod(const NetState& w, const Mat& g1, const Mat& g2, const TaskMoments& task,
                       const DynamicsSpec& spec) {
  if (g1.rows() != w.w1.rows() || g1.cols() != w.w1.cols() || g2.rows() != w.w2.rows() || g2.cols() != w.w2.cols())
    throw DimensionMismatch("gain matrices must match the weight shapes");
  DynamicsSpec s = with_kind(spec, DynamicsKind::gain_mod, w);
  s.basis.reset();
  const auto v = flatten_pair(g1, g2);
  return one_step(s, TaskContext::single(task), w, v);
}

NetState step_engagement(const NetState& w, const Vec& psi, const BlockTaskSet& blocks, const DynamicsSpec& spec) {
  if (psi.size() != blocks.size()) throw DimensionMismatch("one engagement coefficient per dataset");
  const std::vector<double> v(psi.data(), psi.data() + psi.size());
  return one_step(with_kind(spec, DynamicsKind::engagement, w), TaskContext::engagement(blocks), w, v);
}

NetState step_category_engagement(const NetState& w, const Vec& phi, const TaskMoments& task,
                                  const DynamicsSpec& spec) {
  if (phi.size() != task.output_dim) throw DimensionMismatch("one category coefficient per output");
  const std::vector<double> v(phi.data(), phi.data() + phi.size());
  return one_step(with_kind(spec, DynamicsKind::category_engagement, w), TaskContext::single(task), w, v);
}

NetState step_lr_mod(const NetState& w, double rho, const TaskMoments& task, const DynamicsSpec& spec) {
  const double v[] = {rho};
  return one_step(with_kind(spec, DynamicsKind::lr_mod, w), TaskContext::single(task), w, v);
}

NetState step_nonlinear_taylor(const NetState& w, const Mat& g1, const Mat& g2, const TaskMoments& task,
                               const DynamicsSpec& spec) {
  if (g1.rows() != w.w1.rows() || g1.cols() != w.w1.cols() || g2.rows() != w.w2.rows() || g2.cols() != w.w2.cols())
    throw DimensionMismatch("gain matrices must match the weight shapes");
  DynamicsSpec s = with_kind(spec, DynamicsKind::nonlinear_taylor, w);
  s.basis.reset();
  const auto v = flatten_pair(g1, g2);
  return one_step(s, TaskContext::single(task), w, v);
}

namespace {

void check_probe_time(const DynamicsSpec& spec, double t) {
  if (!(t >= 0.0) || t > spec.horizon() * (1.0 + 1e-12))
    throw InvalidParameter("probe time outside [0, T]");
}

}  // namespace

double closed_form_single_neuron(const ControlSchedule& g, const TaskMoments& task, const DynamicsSpec& spec,
                                 double t) {
  spec.validate();
  check_probe_time(spec, t);
  if (task.input_dim != 1 || task.output_dim != 1) throw DimensionMismatch("single neuron needs a 1 x 1 task");
  if (g.per_step() > 1) throw DimensionMismatch("single neuron takes one control value per step");
  if (g.per_step() == 1 && g.steps() != spec.steps) throw DimensionMismatch("schedule length mismatch");
  const double sx = task.sigma_x(0, 0), mu = task.sigma_xy(0, 0);
  double w = spec.init.w();
  for (int k = 0; k < spec.steps; ++k) {
    const double t0 = k * spec.dt;
    if (t0 >= t) break;
    const double h = std::min(spec.dt, t - t0);
    const double gt = 1.0 + (g.per_step() == 1 ? g.at(k)[0] : 0.0);
    const double a = (sx * gt * gt + spec.lambda) / spec.tau_w;
    const double b = mu * gt / spec.tau_w;
    if (a == 0.0) {
      w += b * h;
    } else {
      const double ws = b / a;
      w = ws + (w - ws) * std::exp(-a * h);
    }
  }
  return w;
}

ClosedFormResult closed_form_single_layer(const ControlSchedule& g, const TaskMoments& task,
                                          const DynamicsSpec& spec, double t) {
  spec.validate();
  check_probe_time(spec, t);
  const auto o = static_cast<int>(spec.init.w1.rows()), in = static_cast<int>(spec.init.w1.cols());
  if (o != task.output_dim || in != task.input_dim) throw DimensionMismatch("W must be O x I");
  const int n = o * in;
  if (g.per_step() != 0 && (g.per_step() != n || g.steps() != spec.steps))
    throw DimensionMismatch("gain schedule must hold O x I values per step");

  const Mat syx = task.sigma_xy.transpose();
  const Mat& sx = task.sigma_x;
  // vec() is column-major: entry (p, j) of W sits at j * O + p.
  Vec w(n);
  for (int j = 0; j < in; ++j)
    for (int p = 0; p < o; ++p) w(j * o + p) = spec.init.w1(p, j);

  ClosedFormResult res;
  Mat cached;
  std::vector<double> cached_g;
  double cached_h = -1.0;
  for (int k = 0; k < spec.steps; ++k) {
    const double t0 = k * spec.dt;
    if (t0 >= t) break;
    const double h = std::min(spec.dt, t - t0);
    std::vector<double> gk(static_cast<size_t>(n), 0.0);
    if (g.per_step() != 0) {
      const auto row = g.at(k);
      gk.assign(row.begin(), row.end());
    }
    if (cached.size() == 0 || gk != cached_g || h != cached_h) {
      Vec gt(n), b(n);
      for (int j = 0; j < in; ++j)
        for (int p = 0; p < o; ++p) {
          gt(j * o + p) = 1.0 + gk[static_cast<size_t>(p * in + j)];
          b(j * o + p) = syx(p, j) * gt(j * o + p);
        }
      Mat m = Mat::Zero(n, n);
      for (int j = 0; j < in; ++j)
        for (int l = 0; l < in; ++l)
          for (int p = 0; p < o; ++p) m(j * o + p, l * o + p) = sx(l, j);
      m = gt.asDiagonal() * m * gt.asDiagonal();
      m.diagonal().array() += spec.lambda;
      const double scale = h / spec.tau_w;
      if (m.norm() * scale > 1e3) res.ill_conditioned = true;
      Mat aug = Mat::Zero(n + 1, n + 1);
      aug.topLeftCorner(n, n) = -scale * m;
      aug.topRightCorner(n, 1) = scale * b;
      cached = expm(aug);
      cached_g = gk;
      cached_h = h;
    }
    w = cached.topLeftCorner(n, n) * w + cached.topRightCorner(n, 1);
  }
  res.w.resize(o, in);
  for (int j = 0; j < in; ++j)
    for (int p = 0; p < o; ++p) res.w(p, j) = w(j * o + p);
  return res;
}

std::string trajectory_csv(const Trajectory& traj) {
  std::ostringstream os;
  os << "step,time,loss,reward,cost,net_reward,w1_l1,w1_l2,w2_l1,w2_l2,g_l2\n";
  const int n = traj.steps();
  for (int i = 0; i <= n; ++i) {
    const auto k = static_cast<size_t>(i);
    const double reward = traj.reward.empty() ? -traj.loss[k] : traj.reward[k];
    const double cost = traj.cost.empty() ? 0.0 : traj.cost[k];
    os << i << ',' << fmt_double(i * traj.dt) << ',' << fmt_double(traj.loss[k]) << ',' << fmt_double(reward) << ','
       << fmt_double(cost) << ',' << fmt_double(reward - cost) << ',' << fmt_double(traj.w1_l1[k]) << ','
       << fmt_double(traj.w1_l2[k]) << ',' << fmt_double(traj.w2_l1[k]) << ',' << fmt_double(traj.w2_l2[k]) << ','
       << fmt_double(traj.g_l2[k]) << '\n';
  }
  return os.str();
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  write_text_file(path, trajectory_csv(traj));
}

}  // namespace effort
