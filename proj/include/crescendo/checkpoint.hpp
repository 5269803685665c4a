#pragma once

#include <filesystem>
#include <string>

#include "crescendo/params.hpp"

namespace crescendo {

/// Binary layout, all integers little-endian:
///   "CRSCKPT\0" | u32 version | u32 scalar bytes | u64 n + config text |
///   u64 entries | per entry: u32 n + name, u8 role, u8 trainable,
///   i32 block, i32 branch, i32 unit, u32 rank, u64 dims..., raw values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  std::string config;
  ParameterStore<T> params;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::string& config, const ParameterStore<T>& params);

/// Throws FormatError (with the byte offset) on a bad tag, version, scalar
/// width or a truncated file.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace crescendo
