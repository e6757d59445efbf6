#include "rnas/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>

namespace rnas {

namespace {

constexpr char kMagic[4] = {'R', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw std::runtime_error("checkpoint: unexpected end of " + path);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::vector<NamedParam<float>>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& s = p.tensor.shape();
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    for (int d : s) {
      const std::int32_t dim = d;
      out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    }
    auto v = p.tensor.values();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = read_u32(in, path);
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    const std::uint32_t len = read_u32(in, path);
    e.name.resize(len);
    if (!in.read(e.name.data(), len)) throw std::runtime_error("checkpoint: unexpected end of " + path);
    const std::uint32_t ndim = read_u32(in, path);
    e.shape.resize(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::int32_t dim = 0;
      if (!in.read(reinterpret_cast<char*>(&dim), sizeof(dim))) {
        throw std::runtime_error("checkpoint: unexpected end of " + path);
      }
      e.shape[d] = dim;
    }
    e.values.resize(static_cast<std::size_t>(numel(e.shape)));
    if (!in.read(reinterpret_cast<char*>(e.values.data()),
                 static_cast<std::streamsize>(e.values.size() * sizeof(float)))) {
      throw std::runtime_error("checkpoint: unexpected end of " + path);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void apply_checkpoint(const std::vector<CheckpointEntry>& entries,
                      std::vector<NamedParam<float>> params) {
  std::map<std::string, Tensor<float>> by_name;
  for (auto& p : params) by_name.emplace(p.name, p.tensor);
  for (const auto& e : entries) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint: no parameter named '" + e.name + "'");
    }
    if (it->second.shape() != e.shape) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + e.name + "': file " +
                               shape_str(e.shape) + " vs parameter " + shape_str(it->second.shape()));
    }
    auto dst = it->second.values();
    std::copy(e.values.begin(), e.values.end(), dst.begin());
  }
}

}  // namespace rnas
