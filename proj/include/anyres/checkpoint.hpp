#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "anyres/nn.hpp"

namespace anyres {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container:
///   "ANYRESCK" | u32 version | u64 config hash | u64 meta length | meta JSON
///   | u32 blob count | { u32 name length | name | u64 count | f64[count] }*
///   | u64 FNV-1a of everything before it.
/// All integers and doubles are little-endian; doubles are stored bit-exact.
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::string meta;  // JSON text
  std::map<std::string, std::vector<double>> blobs;

  void put(const std::string& prefix, const nn::ParamSet& params);
  /// Copies blobs "<prefix><name>" into params; every tensor must be present
  /// with the right element count.
  void get(const std::string& prefix, nn::ParamSet& params) const;
  bool has(const std::string& prefix, const nn::ParamSet& params) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ck);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace anyres
