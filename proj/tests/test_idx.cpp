#include <doctest.h>

#include <cstdio>

#include <Eigen/Eigenvalues>

#include "effort/errors.hpp"
#include "effort/idx.hpp"

using namespace effort;

namespace {

std::vector<std::uint8_t> header(std::uint8_t type, std::vector<std::uint32_t> dims) {
  std::vector<std::uint8_t> b = {0, 0, type, static_cast<std::uint8_t>(dims.size())};
  for (auto d : dims)
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(d >> s));
  return b;
}

// n images of side x side with pixel values from `pix(i, r, c)`.
template <class F>
IdxTensor images(std::uint32_t n, std::uint32_t side, F pix) {
  std::vector<std::uint8_t> v;
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t r = 0; r < side; ++r)
      for (std::uint32_t c = 0; c < side; ++c) v.push_back(pix(i, r, c));
  return make_u8_tensor({n, side, side}, v);
}

}  // namespace

TEST_CASE("parse rank-3 and rank-1 tensors") {
  auto b = header(0x08, {2, 3, 4});
  for (int i = 0; i < 24; ++i) b.push_back(static_cast<std::uint8_t>(i));
  const auto t = parse_idx(b);
  CHECK(t.dtype == IdxType::u8);
  CHECK(t.dims == std::vector<std::uint32_t>{2, 3, 4});
  CHECK(t.count() == 24);
  CHECK(t.at(23) == 23.0);

  auto l = header(0x08, {10});
  for (int i = 0; i < 10; ++i) l.push_back(static_cast<std::uint8_t>(i % 10));
  CHECK(parse_idx(l).dims.size() == 1);
}

TEST_CASE("big-endian numeric types") {
  auto b = header(0x0B, {2});
  b.insert(b.end(), {0xFF, 0xFE, 0x01, 0x00});  // -2, 256
  const auto t = parse_idx(b);
  CHECK(t.at(0) == -2.0);
  CHECK(t.at(1) == 256.0);

  auto f = header(0x0D, {1});
  f.insert(f.end(), {0x3F, 0xC0, 0x00, 0x00});  // 1.5f
  CHECK(parse_idx(f).at(0) == 1.5);

  auto d = header(0x0E, {1});
  d.insert(d.end(), {0xC0, 0x04, 0, 0, 0, 0, 0, 0});  // -2.5
  CHECK(parse_idx(d).at(0) == -2.5);
}

TEST_CASE("malformed buffers") {
  CHECK_THROWS_AS(parse_idx({0, 0}), FormatError);
  auto bad_magic = header(0x08, {1});
  bad_magic[0] = 1;
  bad_magic.push_back(0);
  CHECK_THROWS_AS(parse_idx(bad_magic), FormatError);
  auto bad_type = header(0x07, {1});
  bad_type.push_back(0);
  CHECK_THROWS_AS(parse_idx(bad_type), FormatError);
  auto short_dims = header(0x08, {3, 3});
  short_dims.resize(7);
  CHECK_THROWS_AS(parse_idx(short_dims), FormatError);
  auto short_payload = header(0x08, {2, 3});
  short_payload.insert(short_payload.end(), 5, 0);
  CHECK_THROWS_AS(parse_idx(short_payload), FormatError);
  auto long_payload = header(0x08, {2});
  long_payload.insert(long_payload.end(), 3, 0);
  CHECK_THROWS_AS(parse_idx(long_payload), FormatError);
}

TEST_CASE("round trip is bit exact in memory and on disk") {
  for (std::uint8_t type : {0x08, 0x09, 0x0B, 0x0C, 0x0D, 0x0E}) {
    const int size = idx_type_size(static_cast<IdxType>(type));
    auto b = header(type, {3, 2});
    for (int i = 0; i < 6 * size; ++i) b.push_back(static_cast<std::uint8_t>(37 * i + type));
    const auto t = parse_idx(b);
    CHECK(serialize_idx(t) == b);
    const std::string path = "test_idx_roundtrip.idx";
    write_idx_file(t, path);
    const auto back = read_idx_file(path);
    CHECK(serialize_idx(back) == b);
    std::remove(path.c_str());
  }
  CHECK_THROWS_AS(read_idx_file("does/not/exist.idx"), IoError);
}

TEST_CASE("downsampling") {
  std::vector<double> constant(28 * 28, 200.0);
  for (double v : downsample(constant, 28)) CHECK(v == doctest::Approx(200.0 / 255.0));
  for (double v : downsample(std::vector<double>(28 * 28, 0.0), 28)) CHECK(v == 0.0);

  std::vector<double> checker(28 * 28);
  for (int r = 0; r < 28; ++r)
    for (int c = 0; c < 28; ++c) checker[static_cast<size_t>(r * 28 + c)] = (r + c) % 2 ? 255.0 : 0.0;
  for (double v : downsample(checker, 28)) CHECK(std::abs(v - 0.5) <= 0.12);

  // pooling conserves total intensity: each output cell covers (28/5)^2 pixels
  std::vector<double> ramp(28 * 28);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i % 256);
  double in_sum = 0.0, out_sum = 0.0;
  for (double v : ramp) in_sum += v / 255.0;
  for (double v : downsample(ramp, 28)) out_sum += v * (28.0 / 5.0) * (28.0 / 5.0);
  CHECK(out_sum == doctest::Approx(in_sum));

  CHECK_THROWS_AS(downsample(std::vector<double>(28 * 27), 28), InvalidParameter);
  CHECK_THROWS_AS(downsample(std::vector<double>(9), 3), InvalidParameter);
}

TEST_CASE("filters") {
  const auto pair = binary_pair_filter(3, 8);
  CHECK(pair.output_dim() == 1);
  CHECK(pair.relabel.at(3)(0) == 1.0);
  CHECK(pair.relabel.at(8)(0) == -1.0);
  CHECK_THROWS_AS(binary_pair_filter(3, 3), InvalidParameter);
  const auto hot = one_hot_filter({1, 4, 7});
  CHECK(hot.output_dim() == 3);
  CHECK(hot.relabel.at(4)(1) == 1.0);
  CHECK(hot.relabel.at(4).sum() == 1.0);
}

TEST_CASE("single sample moments are its outer products") {
  const auto img = images(1, 5, [](auto, auto r, auto c) { return static_cast<std::uint8_t>(10 * r + c); });
  const auto lab = make_u8_tensor({1}, {3});
  MomentOptions o;
  o.bias = false;
  const auto m = estimate_moments(img, lab, binary_pair_filter(3, 8), o);
  Vec x(25);
  for (int i = 0; i < 25; ++i) x(i) = (10 * (i / 5) + i % 5) / 255.0;
  CHECK((m.sigma_x - x * x.transpose()).norm() < 1e-14);
  CHECK((m.sigma_xy - x).norm() < 1e-14);
  CHECK(m.sigma_y(0, 0) == 1.0);
}

TEST_CASE("duplicating the data leaves the moments unchanged") {
  auto pix = [](auto i, auto r, auto c) { return static_cast<std::uint8_t>((i * 37 + r * 11 + c * 5) % 256); };
  const auto a = images(6, 10, pix);
  const auto b = images(12, 10, [&](auto i, auto r, auto c) { return pix(i % 6, r, c); });
  const auto la = make_u8_tensor({6}, {3, 8, 3, 1, 8, 3});
  const auto lb = make_u8_tensor({12}, {3, 8, 3, 1, 8, 3, 3, 8, 3, 1, 8, 3});
  const auto ma = estimate_moments(a, la, binary_pair_filter(3, 8));
  const auto mb = estimate_moments(b, lb, binary_pair_filter(3, 8));
  CHECK((ma.sigma_x - mb.sigma_x).norm() < 1e-13);
  CHECK((ma.sigma_xy - mb.sigma_xy).norm() < 1e-13);
  CHECK(ma.input_dim == 26);  // 5 x 5 plus bias
}

TEST_CASE("one-hot targets have unit trace and PSD joint moments") {
  const std::uint32_t n = 100;
  const auto img = images(n, 28, [](auto i, auto r, auto c) { return static_cast<std::uint8_t>((i * 13 + r * c) % 256); });
  std::vector<std::uint8_t> labels;
  for (std::uint32_t i = 0; i < n; ++i) labels.push_back(static_cast<std::uint8_t>((i * 7) % 10));
  const auto m = estimate_moments(img, make_u8_tensor({n}, labels), one_hot_filter({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  CHECK(std::abs(m.sigma_y.trace() - 1.0) < 1e-9);
  Mat joint(m.input_dim + m.output_dim, m.input_dim + m.output_dim);
  joint << m.sigma_x, m.sigma_xy, m.sigma_xy.transpose(), m.sigma_y;
  CHECK(Eigen::SelfAdjointEigenSolver<Mat>(joint).eigenvalues().minCoeff() > -1e-10);

  // brute force: sigma_y = average of y y^T
  Mat sy = Mat::Zero(10, 10);
  for (auto l : labels) sy(l, l) += 1.0 / n;
  CHECK((m.sigma_y - sy).norm() < 1e-12);
}

TEST_CASE("class balancing equalizes class weight") {
  const auto img = images(5, 5, [](auto i, auto, auto) { return static_cast<std::uint8_t>(i * 40); });
  const auto lab = make_u8_tensor({5}, {1, 1, 1, 1, 2});
  MomentOptions o;
  o.class_balanced = true;
  const auto m = estimate_moments(img, lab, one_hot_filter({1, 2}), o);
  CHECK(m.mean_y(0) == doctest::Approx(0.5));
  CHECK(m.mean_y(1) == doctest::Approx(0.5));
  CHECK_THROWS_AS(estimate_moments(img, lab, one_hot_filter({1, 3}), o), EmptyData);
}

TEST_CASE("filtering and limits") {
  const auto img = images(4, 5, [](auto, auto, auto) { return std::uint8_t{9}; });
  const auto lab = make_u8_tensor({4}, {0, 0, 5, 5});
  CHECK_THROWS_AS(estimate_moments(img, lab, binary_pair_filter(3, 8)), EmptyData);
  MomentOptions o;
  o.limit = 2;
  CHECK_THROWS_AS(estimate_moments(img, lab, binary_pair_filter(5, 8), o), EmptyData);
  CHECK_THROWS_AS(estimate_moments(img, make_u8_tensor({3}, {0, 0, 5}), binary_pair_filter(0, 5)),
                  DimensionMismatch);
}
