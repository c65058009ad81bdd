#pragma once

// Named-tensor checkpoint file, little-endian throughout:
//
//   magic    8 bytes  "PROCKD01"
//   version  u32      1
//   count    u32      number of manifest entries
//   entry    u32 name length, name bytes (UTF-8), u8 dtype (1 = f64),
//            u32 rank, u64 dims[rank]
//   payload  f64 values of every entry, in manifest order
//   crc      u32      CRC-32 (IEEE) of the payload bytes

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "prockd/params.hpp"

namespace prockd::harness {

inline constexpr char kCheckpointMagic[9] = "PROCKD01";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Throws Errc::FormatError on duplicate names.
std::string serialize_checkpoint(const ParamList& tensors);
// Throws Errc::FormatError, Errc::VersionUnsupported or Errc::ChecksumMismatch.
ParamList deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const ParamList& tensors);
ParamList load_checkpoint(const std::string& path);

// Copies values of `source` into same-named, same-shaped tensors of `target`.
// Throws Errc::FormatError when an entry of `target` is missing or differs in shape.
void restore(const ParamList& target, const ParamList& source, const std::string& prefix = "");

// Text stored as one f64 per byte, for embedding run metadata in a checkpoint.
Tensor text_tensor(std::string_view text);
std::string tensor_text(const Tensor& t);

const Tensor* find_tensor(const ParamList& tensors, std::string_view name);

}  // namespace prockd::harness
