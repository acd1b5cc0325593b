#pragma once

#include <filesystem>

#include <json.hpp>

#include "compose/placement_net.hpp"

namespace compose {

/// Single-file checkpoint:
///   "CMPSCKPT" | u32 version | u64 header bytes | JSON header | float64-LE tensor data
/// The header carries the NetworkConfig, the init seed, a table of named tensors (shape, element
/// offset, count) and free-form metadata.
void save_checkpoint(const PlacementNet& net, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  PlacementNet net;
  nlohmann::json metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace compose
