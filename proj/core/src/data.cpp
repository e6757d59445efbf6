#include "rnas/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "rnas/rng.hpp"

namespace rnas {

namespace {

constexpr int kCifarChannels = 3;
constexpr int kCifarDim = 32;
constexpr int kCifarClasses = 10;
constexpr std::size_t kCifarRecord = 1 + static_cast<std::size_t>(kCifarChannels) * kCifarDim * kCifarDim;

float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

}  // namespace

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw DataError("synthetic: need at least 2 classes");
  if (spec.n < spec.classes) throw DataError("synthetic: n must be >= classes");
  if (spec.channels < 1 || spec.height < 1 || spec.width < 1) {
    throw DataError("synthetic: invalid image dims " + std::to_string(spec.channels) + "x" +
                    std::to_string(spec.height) + "x" + std::to_string(spec.width));
  }
  const std::size_t dim = static_cast<std::size_t>(spec.channels) * spec.height * spec.width;
  if (spec.kind == SyntheticKind::GaussianBlobs && dim < 16) {
    throw DataError("synthetic: blobs need at least 16 pixels to separate classes");
  }
  if (spec.kind == SyntheticKind::StripedImages && spec.width < 2 * spec.classes) {
    throw DataError("synthetic: stripes need width >= 2 * classes (Nyquist)");
  }

  Rng rng = Rng::derive(seed, "synthetic");
  Dataset ds;
  ds.channels = spec.channels;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.classes = spec.classes;
  ds.images.resize(static_cast<std::size_t>(spec.n) * dim);
  ds.labels.resize(static_cast<std::size_t>(spec.n));

  std::vector<float> means;
  if (spec.kind == SyntheticKind::GaussianBlobs) {
    // One +-amplitude sign pattern per class around mid-gray.
    means.resize(static_cast<std::size_t>(spec.classes) * dim);
    for (int c = 0; c < spec.classes; ++c) {
      for (std::size_t i = 0; i < dim; ++i) {
        const double s = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
        means[static_cast<std::size_t>(c) * dim + i] = static_cast<float>(0.5 + spec.amplitude * s);
      }
    }
  }

  for (int i = 0; i < spec.n; ++i) {
    const int label = i % spec.classes;
    ds.labels[static_cast<std::size_t>(i)] = label;
    float* img = ds.images.data() + static_cast<std::size_t>(i) * dim;
    if (spec.kind == SyntheticKind::GaussianBlobs) {
      const float* mu = means.data() + static_cast<std::size_t>(label) * dim;
      for (std::size_t p = 0; p < dim; ++p) {
        img[p] = clamp01(mu[p] + rng.normal(0.0, spec.noise));
      }
    } else {
      const double freq = label + 1;
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (int ch = 0; ch < spec.channels; ++ch) {
        for (int y = 0; y < spec.height; ++y) {
          for (int x = 0; x < spec.width; ++x) {
            const double angle = 2.0 * std::numbers::pi * freq * (x + 0.5) / spec.width + phase;
            const double v = 0.5 + spec.amplitude * std::sin(angle) + rng.normal(0.0, spec.noise);
            img[(static_cast<std::size_t>(ch) * spec.height + y) * spec.width + x] = clamp01(v);
          }
        }
      }
    }
  }
  return ds;
}

namespace {

void read_cifar_file(const std::string& file, Dataset& ds) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cifar10: cannot open " + file);
  in.seekg(0, std::ios::end);
  const std::int64_t bytes = in.tellg();
  in.seekg(0);
  if (bytes <= 0 || bytes % static_cast<std::int64_t>(kCifarRecord) != 0) {
    throw DataError("cifar10: " + file + " truncated at byte offset " +
                    std::to_string(bytes - bytes % static_cast<std::int64_t>(kCifarRecord)) +
                    " (records are " + std::to_string(kCifarRecord) + " bytes)");
  }
  const std::int64_t records = bytes / static_cast<std::int64_t>(kCifarRecord);
  std::vector<unsigned char> buf(kCifarRecord);
  for (std::int64_t r = 0; r < records; ++r) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(kCifarRecord))) {
      throw DataError("cifar10: " + file + " read failed at byte offset " +
                      std::to_string(r * static_cast<std::int64_t>(kCifarRecord)));
    }
    const int label = buf[0];
    if (label >= kCifarClasses) {
      throw DataError("cifar10: " + file + " label byte " + std::to_string(label) +
                      " at byte offset " + std::to_string(r * static_cast<std::int64_t>(kCifarRecord)));
    }
    ds.labels.push_back(label);
    for (std::size_t i = 1; i < kCifarRecord; ++i) {
      ds.images.push_back(static_cast<float>(buf[i]) / 255.0f);
    }
  }
}

}  // namespace

Dataset load_cifar10(const std::string& path, int subset, std::uint64_t seed) {
  Dataset ds;
  ds.channels = kCifarChannels;
  ds.height = kCifarDim;
  ds.width = kCifarDim;
  ds.classes = kCifarClasses;

  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    for (int b = 1; b <= 5; ++b) {
      read_cifar_file((fs::path(path) / ("data_batch_" + std::to_string(b) + ".bin")).string(), ds);
    }
  } else {
    read_cifar_file(path, ds);
  }

  if (subset <= 0 || subset >= static_cast<int>(ds.size())) return ds;
  if (subset % kCifarClasses != 0) {
    throw DataError("cifar10: subset " + std::to_string(subset) + " is not divisible by " +
                    std::to_string(kCifarClasses) + " classes");
  }
  const int per_class = subset / kCifarClasses;
  std::vector<std::vector<std::size_t>> by_class(kCifarClasses);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  Rng rng = Rng::derive(seed, "cifar10-subset");
  std::vector<std::size_t> chosen;
  for (auto& idx : by_class) {
    if (static_cast<int>(idx.size()) < per_class) {
      throw DataError("cifar10: not enough examples for a balanced subset of " + std::to_string(subset));
    }
    rng.shuffle(idx.begin(), idx.end());
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + per_class);
  }
  rng.shuffle(chosen.begin(), chosen.end());

  Dataset out;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  out.classes = ds.classes;
  const std::size_t dim = ds.image_size();
  out.images.reserve(chosen.size() * dim);
  out.labels.reserve(chosen.size());
  for (std::size_t i : chosen) {
    out.labels.push_back(ds.labels[i]);
    out.images.insert(out.images.end(), ds.images.begin() + static_cast<std::ptrdiff_t>(i * dim),
                      ds.images.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
  }
  return out;
}

void save_records(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("records: cannot write " + path);
  const std::size_t dim = ds.image_size();
  std::vector<unsigned char> buf(1 + dim);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    buf[0] = static_cast<unsigned char>(ds.labels[i]);
    for (std::size_t p = 0; p < dim; ++p) {
      const float v = ds.images[i * dim + p];
      buf[1 + p] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
}

std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.fraction > 0.0 && spec.fraction < 1.0)) {
    throw DataError("split: fraction must be in (0,1), got " + std::to_string(spec.fraction));
  }
  const std::size_t n = ds.size();
  std::size_t n_first = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(n)));
  n_first = std::min(std::max<std::size_t>(n_first, 1), n - 1);
  Rng rng = Rng::derive(spec.seed, "split");
  std::vector<std::size_t> perm = rng.permutation(n);

  auto take = [&](std::size_t lo, std::size_t hi) {
    Dataset out;
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.classes = ds.classes;
    const std::size_t dim = ds.image_size();
    out.images.reserve((hi - lo) * dim);
    out.labels.reserve(hi - lo);
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t i = perm[k];
      out.labels.push_back(ds.labels[i]);
      out.images.insert(out.images.end(), ds.images.begin() + static_cast<std::ptrdiff_t>(i * dim),
                        ds.images.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    }
    return out;
  };
  return {take(0, n_first), take(n_first, n)};
}

std::pair<Tensor<float>, std::vector<int>> make_batch(const Dataset& ds,
                                                      std::span<const std::size_t> indices) {
  const std::size_t dim = ds.image_size();
  std::vector<float> values;
  values.reserve(indices.size() * dim);
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) {
    values.insert(values.end(), ds.images.begin() + static_cast<std::ptrdiff_t>(i * dim),
                  ds.images.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    labels.push_back(ds.labels[i]);
  }
  Tensor<float> batch = Tensor<float>::from_values(
      {static_cast<int>(indices.size()), ds.channels, ds.height, ds.width}, std::move(values));
  return {std::move(batch), std::move(labels)};
}

}  // namespace rnas
