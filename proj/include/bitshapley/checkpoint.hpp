#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bitshapley/tensor.hpp"

namespace bitshapley {

// Checkpoint container: magic "BSHP", format version u16, then per-tensor
// records of (u32 name length, name bytes, u32 rank, u32 dims...,
// little-endian f64 payload) until end of file.  Round-trips are bit-exact.

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& entries);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(
    const std::string& path);

}  // namespace bitshapley
