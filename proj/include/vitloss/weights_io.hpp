#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "vitloss/vit.hpp"

// VPW1 weight container.
//
//   offset 0   "VPW1"
//   offset 4   u64 little-endian header length H
//   offset 12  H bytes of UTF-8 JSON: config, tensor directory, payload CRC32
//   ...        zero padding up to the next 64-byte boundary (payload start)
//   payload    little-endian f32 tensors, row-major, each at a 64-byte aligned
//              offset relative to the payload start
namespace vitloss::weights {

inline constexpr std::size_t kAlignment = 64;
inline constexpr std::size_t kPreambleBytes = 12;

nlohmann::json config_to_json(const ViTConfig& config);
/// FormatError on missing or mistyped fields, SchemaError on invalid values.
ViTConfig config_from_json(const nlohmann::json& j);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Serialized file contents. SchemaError if the bundle does not match its
/// config.
std::vector<std::uint8_t> serialize(const WeightBundle<float>& bundle);

/// Parses a complete file image. Every failure is a typed vitloss::Error.
WeightBundle<float> parse(std::span<const std::uint8_t> bytes);

void save(const WeightBundle<float>& bundle, const std::filesystem::path& path);
WeightBundle<float> load(const std::filesystem::path& path);

/// Deterministic toy weights: every entry is 0.02 * u with u uniform in
/// [-1, 1) from xoshiro256** seeded with `seed`, drawn in schema order.
/// LayerNorm gains are 1 + 0.02 * u.
WeightBundle<float> generate_toy(const ViTConfig& config, std::uint64_t seed);

}  // namespace vitloss::weights
