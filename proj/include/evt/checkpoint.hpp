#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "evt/backbone.hpp"
#include "evt/representation.hpp"

namespace evt {

// Checkpoint layout, little-endian:
//   "EVTC" | version u32 = 1 | header_len u32 | header (UTF-8 JSON: {"model":..., "repr":...})
//   array_count u32 | array_count x { name_len u16 | name | rows u32 | cols u32 | rows*cols f64 }
// Arrays appear in ModelParams::visit order; doubles are stored as raw IEEE-754
// bits, so save/load round-trips exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig model;
    ReprConfig repr;
    ModelParams params;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws DataError on a malformed file or arrays that do not fit the config.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace evt
