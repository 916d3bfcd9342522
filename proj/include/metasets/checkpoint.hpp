#pragma once

#include <filesystem>

#include "metasets/nn.hpp"

namespace metasets {

// Binary checkpoint, little-endian:
//   "MSETCKPT" | u32 version | u64 class_count | u64 layers
//   | per layer: u64 in_dim, u64 out_dim
//   | u64 n | n x f64 params
//   | u64 adam_step | f64 beta1 | f64 beta2 | f64 epsilon
//   | n x f64 first moments | n x f64 second moments
struct Checkpoint {
  nn::ModelParams params;
  nn::AdamState adam;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metasets
