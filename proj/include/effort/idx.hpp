#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "effort/task_moments.hpp"

namespace effort {

enum class IdxType : std::uint8_t {
  u8 = 0x08,
  i8 = 0x09,
  i16 = 0x0B,
  i32 = 0x0C,
  f32 = 0x0D,
  f64 = 0x0E,
};

int idx_type_size(IdxType t);

// An IDX tensor. `data` holds the payload bytes exactly as stored in the file
// (big-endian), so serialization is a plain copy.
struct IdxTensor {
  IdxType dtype = IdxType::u8;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t count() const;
  double at(std::size_t i) const;
};

IdxTensor parse_idx(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_idx(const IdxTensor& t);
IdxTensor read_idx_file(const std::string& path);
void write_idx_file(const IdxTensor& t, const std::string& path);

IdxTensor make_u8_tensor(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> values);

// Area-weighted average pooling of a square side x side image onto an
// out x out grid, divided by 255. Row-major in and out.
std::vector<double> downsample(const std::vector<double>& image, int side, int out = 5);

struct DigitFilter {
  std::set<int> keep;
  std::map<int, Vec> relabel;

  void validate() const;
  int output_dim() const;
};

// a -> +1, b -> -1 (scalar target).
DigitFilter binary_pair_filter(int a, int b);
// digits -> one-hot vectors over the kept digits, in ascending order.
DigitFilter one_hot_filter(const std::set<int>& digits);

struct MomentOptions {
  bool bias = true;
  // Weight samples so every kept class carries equal total weight.
  bool class_balanced = false;
  // Use at most this many images (0 = all), counted before filtering.
  int limit = 0;
  int side = 5;
};

// images: rank-3 (count x h x w) u8 tensor, labels: rank-1 u8 tensor.
TaskMoments estimate_moments(const IdxTensor& images, const IdxTensor& labels, const DigitFilter& filter,
                             const MomentOptions& opts = {});

}  // namespace effort
