#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "haar/param_vector.hpp"

namespace haar {

/// Binary checkpoint: string metadata plus named parameter segments.
///
/// Byte layout, all integers little-endian, all reals IEEE-754 binary64
/// little-endian:
///
///   magic      8 bytes  "HAARCKPT"
///   version    u32      kCheckpointVersion
///   n_meta     u32
///   n_meta x { u32 key_len, key bytes, u32 value_len, value bytes }   (sorted by key)
///   n_segments u32
///   n_segments x { u32 name_len, name bytes, u64 offset, u64 length, length x f64 }
///
/// Segment offsets must be contiguous starting at zero. Encoding is a pure
/// function of the contents, so save -> load -> save is byte-identical.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  ParamVector params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace haar
