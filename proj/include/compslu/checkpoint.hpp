#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "compslu/nn.hpp"

namespace compslu {

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::string config_text;  // resolved key-value config the model was built from
};

/// Archive layout (all integers little-endian):
///   "CSLUCKPT" | u32 version=1 | u64 config_hash | u64 step | u64 seed
///   | u32 len + config text | u32 n_params
///   | n_params x ( u32 len + name | u32 ndim | ndim x u64 dim | f64 data... )
void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     const CheckpointMeta& meta);

/// Reads metadata only.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Overwrites `params` in place; every stored name must exist with the same
/// shape and every parameter must be present in the archive.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParameterStore& params);

}  // namespace compslu
