#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "drag/tensor.hpp"

namespace drag {

// Binary checkpoint: magic "DRAG", format version u32, a tensor table of
// (name length, name bytes, rank, extents, row-major little-endian f64 values),
// then key=value metadata lines. Round-trips are bit-exact.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, std::string>> metadata;

  const Tensor* find(const std::string& name) const;
  std::string meta(const std::string& key, const std::string& fallback = "") const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace drag
