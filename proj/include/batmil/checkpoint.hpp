#pragma once

// Checkpoint layout (little-endian):
//   "BMIL" | u32 version | config block | u32 tensor count |
//   tensors (u16 name length, name, u8 rank, u32 dims[rank], f32 payload) |
//   u32 CRC32 of all preceding bytes
// Config block: u16 field count, then per field u16 name length, name,
// u8 type tag (0 = u64, 1 = f64, 2 = string) and the value.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "batmil/model.hpp"

namespace batmil::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(BatmilParams& params);
/// Throws FormatError on bad magic, version, CRC or layout; ConfigError when
/// `expected` is given and differs from the stored configuration.
BatmilParams decode_checkpoint(const std::vector<std::uint8_t>& bytes, const ModelConfig* expected = nullptr);

void checkpoint_save(BatmilParams& params, const std::filesystem::path& path);
BatmilParams checkpoint_load(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace batmil::model
