#include "effort/idx.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "effort/errors.hpp"

namespace effort {

int idx_type_size(IdxType t) {
  switch (t) {
    case IdxType::u8:
    case IdxType::i8:
      return 1;
    case IdxType::i16:
      return 2;
    case IdxType::i32:
    case IdxType::f32:
      return 4;
    case IdxType::f64:
      return 8;
  }
  throw FormatError("unknown IDX element type");
}

namespace {

IdxType idx_type_from_code(std::uint8_t code) {
  switch (code) {
    case 0x08: return IdxType::u8;
    case 0x09: return IdxType::i8;
    case 0x0B: return IdxType::i16;
    case 0x0C: return IdxType::i32;
    case 0x0D: return IdxType::f32;
    case 0x0E: return IdxType::f64;
    default: break;
  }
  throw FormatError("unknown IDX element type code " + std::to_string(code));
}

std::uint64_t read_be(const std::uint8_t* p, int n) {
  std::uint64_t v = 0;
  for (int k = 0; k < n; ++k) v = (v << 8) | p[k];
  return v;
}

}  // namespace

std::size_t IdxTensor::count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

double IdxTensor::at(std::size_t i) const {
  const int sz = idx_type_size(dtype);
  if ((i + 1) * static_cast<std::size_t>(sz) > data.size()) throw InvalidParameter("IDX index out of range");
  const std::uint8_t* p = data.data() + i * static_cast<std::size_t>(sz);
  const std::uint64_t raw = read_be(p, sz);
  switch (dtype) {
    case IdxType::u8: return static_cast<double>(raw);
    case IdxType::i8: return static_cast<double>(static_cast<std::int8_t>(raw));
    case IdxType::i16: return static_cast<double>(static_cast<std::int16_t>(raw));
    case IdxType::i32: return static_cast<double>(static_cast<std::int32_t>(raw));
    case IdxType::f32: return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(raw)));
    case IdxType::f64: return std::bit_cast<double>(raw);
  }
  return 0.0;
}

IdxTensor parse_idx(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw FormatError("IDX buffer shorter than the 4-byte magic");
  if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("bad IDX magic: first two bytes must be zero");
  IdxTensor t;
  t.dtype = idx_type_from_code(bytes[2]);
  const int rank = bytes[3];
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw FormatError("IDX buffer truncated inside the dimension list");
  for (int k = 0; k < rank; ++k) t.dims.push_back(static_cast<std::uint32_t>(read_be(bytes.data() + 4 + 4 * k, 4)));
  const std::size_t payload = t.count() * static_cast<std::size_t>(idx_type_size(t.dtype));
  if (bytes.size() - header < payload) throw FormatError("IDX payload shorter than the dimensions require");
  if (bytes.size() - header > payload) throw FormatError("IDX buffer has trailing bytes");
  t.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return t;
}

std::vector<std::uint8_t> serialize_idx(const IdxTensor& t) {
  if (t.dims.size() > 255) throw InvalidParameter("IDX rank above 255");
  if (t.data.size() != t.count() * static_cast<std::size_t>(idx_type_size(t.dtype)))
    throw DimensionMismatch("IDX data length does not match dims");
  std::vector<std::uint8_t> out = {0, 0, static_cast<std::uint8_t>(t.dtype), static_cast<std::uint8_t>(t.dims.size())};
  for (auto d : t.dims)
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>((d >> s) & 0xFF));
  out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

IdxTensor read_idx_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

void write_idx_file(const IdxTensor& t, const std::string& path) {
  const auto bytes = serialize_idx(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

IdxTensor make_u8_tensor(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> values) {
  IdxTensor t;
  t.dtype = IdxType::u8;
  t.dims = std::move(dims);
  t.data = std::move(values);
  if (t.data.size() != t.count()) throw DimensionMismatch("values do not match dims");
  return t;
}

std::vector<double> downsample(const std::vector<double>& image, int side, int out) {
  if (side < out || out < 1) throw InvalidParameter("downsample needs side >= out >= 1");
  if (image.size() != static_cast<std::size_t>(side) * static_cast<std::size_t>(side))
    throw InvalidParameter("downsample needs a square image");
  // Overlap of pixel p with output cell c along one axis, in pixel units.
  const double cell = static_cast<double>(side) / out;
  Mat w = Mat::Zero(out, side);
  for (int c = 0; c < out; ++c) {
    const double lo = c * cell, hi = (c + 1) * cell;
    for (int p = static_cast<int>(std::floor(lo)); p < side && p < hi; ++p)
      w(c, p) = std::max(0.0, std::min<double>(p + 1, hi) - std::max<double>(p, lo));
  }
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> img(image.data(), side,
                                                                                                     side);
  const Mat pooled = w * img * w.transpose() / (cell * cell * 255.0);
  std::vector<double> res(static_cast<std::size_t>(out * out));
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < out; ++c) res[static_cast<std::size_t>(r * out + c)] = pooled(r, c);
  return res;
}

void DigitFilter::validate() const {
  if (keep.empty()) throw InvalidParameter("digit filter keeps no digits");
  int dim = -1;
  for (int d : keep) {
    if (d < 0 || d > 9) throw InvalidParameter("digits must be 0-9");
    auto it = relabel.find(d);
    if (it == relabel.end()) throw InvalidParameter("no target for digit " + std::to_string(d));
    if (dim >= 0 && it->second.size() != dim) throw DimensionMismatch("targets have different sizes");
    dim = static_cast<int>(it->second.size());
  }
  if (relabel.size() != keep.size()) throw InvalidParameter("targets defined for digits that are not kept");
}

int DigitFilter::output_dim() const {
  return relabel.empty() ? 0 : static_cast<int>(relabel.begin()->second.size());
}

DigitFilter binary_pair_filter(int a, int b) {
  if (a == b) throw InvalidParameter("binary pair needs two different digits");
  DigitFilter f;
  f.keep = {a, b};
  f.relabel[a] = Vec::Constant(1, 1.0);
  f.relabel[b] = Vec::Constant(1, -1.0);
  f.validate();
  return f;
}

DigitFilter one_hot_filter(const std::set<int>& digits) {
  DigitFilter f;
  f.keep = digits;
  int k = 0;
  for (int d : digits) {
    Vec v = Vec::Zero(static_cast<Eigen::Index>(digits.size()));
    v(k++) = 1.0;
    f.relabel[d] = v;
  }
  f.validate();
  return f;
}

namespace {

// Draws rows of a stored sample set uniformly with replacement.
class EmpiricalSource : public SampleSource {
 public:
  EmpiricalSource(Mat x, Mat y) : x_(std::move(x)), y_(std::move(y)) {}
  void sample(int batch, std::mt19937_64& rng, Mat& x, Mat& y) const override {
    std::uniform_int_distribution<Eigen::Index> pick(0, x_.cols() - 1);
    x.resize(x_.rows(), batch);
    y.resize(y_.rows(), batch);
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index i = pick(rng);
      x.col(b) = x_.col(i);
      y.col(b) = y_.col(i);
    }
  }

 private:
  Mat x_, y_;
};

struct Filtered {
  Mat x, y;
  std::vector<int> digit;
};

Filtered collect(const IdxTensor& images, const IdxTensor& labels, const DigitFilter& filter,
                 const MomentOptions& opts) {
  filter.validate();
  if (images.dims.size() != 3) throw DimensionMismatch("images must be a rank-3 IDX tensor");
  if (labels.dims.size() != 1) throw DimensionMismatch("labels must be a rank-1 IDX tensor");
  if (images.dims[0] != labels.dims[0]) throw DimensionMismatch("image and label counts differ");
  if (images.dims[1] != images.dims[2]) throw InvalidParameter("images must be square");
  if (opts.limit < 0) throw InvalidParameter("limit must be >= 0");
  const int side = static_cast<int>(images.dims[1]);
  std::size_t n = images.dims[0];
  if (opts.limit > 0) n = std::min(n, static_cast<std::size_t>(opts.limit));

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i)
    if (filter.keep.count(static_cast<int>(labels.at(i)))) kept.push_back(i);
  if (kept.empty()) throw EmptyData("no images left after digit filtering");

  const int in = opts.side * opts.side + (opts.bias ? 1 : 0);
  Filtered f;
  f.x.resize(in, static_cast<Eigen::Index>(kept.size()));
  f.y.resize(filter.output_dim(), static_cast<Eigen::Index>(kept.size()));
  std::vector<double> img(static_cast<std::size_t>(side * side));
  const std::size_t pixels = img.size();
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const std::size_t i = kept[k];
    for (std::size_t p = 0; p < pixels; ++p) img[p] = images.at(i * pixels + p);
    const auto small = downsample(img, side, opts.side);
    const auto col = static_cast<Eigen::Index>(k);
    for (std::size_t p = 0; p < small.size(); ++p) f.x(static_cast<Eigen::Index>(p), col) = small[p];
    if (opts.bias) f.x(in - 1, col) = 1.0;
    const int d = static_cast<int>(labels.at(i));
    f.y.col(col) = filter.relabel.at(d);
    f.digit.push_back(d);
  }
  return f;
}

TaskMoments weighted_moments(const Mat& x, const Mat& y, const Vec& w) {
  TaskMoments m;
  m.input_dim = static_cast<int>(x.rows());
  m.output_dim = static_cast<int>(y.rows());
  const Mat xw = x * w.asDiagonal();
  m.sigma_x = xw * x.transpose();
  m.sigma_xy = xw * y.transpose();
  m.sigma_y = (y * w.asDiagonal()) * y.transpose();
  m.sigma_x = 0.5 * (m.sigma_x + m.sigma_x.transpose()).eval();
  m.sigma_y = 0.5 * (m.sigma_y + m.sigma_y.transpose()).eval();
  m.mean_x = x * w;
  m.mean_y = y * w;
  return m;
}

Vec sample_weights(const Filtered& f, const DigitFilter& filter, bool balanced) {
  const auto n = static_cast<Eigen::Index>(f.digit.size());
  if (!balanced) return Vec::Constant(n, 1.0 / static_cast<double>(n));
  std::map<int, int> counts;
  for (int d : f.digit) ++counts[d];
  for (int d : filter.keep)
    if (!counts.count(d)) throw EmptyData("class-balanced moments need every kept digit; missing " + std::to_string(d));
  const double classes = static_cast<double>(filter.keep.size());
  Vec w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = 1.0 / (classes * counts[f.digit[static_cast<std::size_t>(i)]]);
  return w;
}

}  // namespace

TaskMoments estimate_moments(const IdxTensor& images, const IdxTensor& labels, const DigitFilter& filter,
                             const MomentOptions& opts) {
  Filtered f = collect(images, labels, filter, opts);
  TaskMoments m = weighted_moments(f.x, f.y, sample_weights(f, filter, opts.class_balanced));
  if (!opts.class_balanced) m.source = std::make_shared<EmpiricalSource>(std::move(f.x), std::move(f.y));
  return m;
}

}  // namespace effort
