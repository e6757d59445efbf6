#pragma once

#include <string>
#include <vector>

#include "rnas/network.hpp"
#include "rnas/tensor.hpp"

namespace rnas {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// Flat binary arrays with a shape header, little-endian:
//   magic "RNCK", u32 version, u32 count,
//   per entry: u32 name length, name bytes, u32 ndim, i32 dims, f32 data.
void save_checkpoint(const std::vector<NamedParam<float>>& params, const std::string& path);
std::vector<CheckpointEntry> load_checkpoint(const std::string& path);

// Copies every entry into the matching destination parameter. Throws if an
// entry is missing or has the wrong shape.
void apply_checkpoint(const std::vector<CheckpointEntry>& entries,
                      std::vector<NamedParam<float>> params);

}  // namespace rnas
