#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rnas/tensor.hpp"

namespace rnas {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Immutable after construction. Images are (N,C,H,W) row-major in [0,1].
struct Dataset {
  int channels = 0;
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<float> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
};

enum class SyntheticKind { GaussianBlobs, StripedImages };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::StripedImages;
  int n = 512;
  int classes = 2;
  int channels = 1;
  int height = 8;
  int width = 8;
  // Blobs: class mean 0.5 + amplitude * (+-1 pattern), i.i.d. pixel noise.
  // Stripes: class c has spatial frequency c+1 across the width.
  double amplitude = 0.25;
  double noise = 0.05;
};

// Deterministic per seed; class labels round-robin so counts balance to +-1.
Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Standard binary batches: 3073-byte records, 1 label byte + 3x32x32 pixels.
// `path` is a directory holding data_batch_{1..5}.bin or a single .bin file.
// subset > 0 draws a class-balanced sample of that size.
Dataset load_cifar10(const std::string& path, int subset, std::uint64_t seed);

// Writes label-byte + pixel-byte records (the CIFAR-10 layout generalized to
// the dataset's geometry).
void save_records(const Dataset& ds, const std::string& path);

struct SplitSpec {
  double fraction = 0.5;
  std::uint64_t seed = 0;
};

// Disjoint, exhaustive, per-seed deterministic split.
std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec);

std::pair<Tensor<float>, std::vector<int>> make_batch(const Dataset& ds,
                                                      std::span<const std::size_t> indices);

}  // namespace rnas
