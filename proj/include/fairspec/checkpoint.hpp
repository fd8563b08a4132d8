#pragma once

// Weight checkpoints: one line of JSON header (dims, n, h, d_y, seed and
// any provenance the caller attaches), a newline, then each layer as a
// row-major block of little-endian float64, layers concatenated.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "fairspec/network.hpp"

namespace fairspec {

struct Checkpoint {
    Net net;
    nlohmann::json header;
};

std::vector<std::uint8_t> encode_checkpoint(const Net& net, const nlohmann::json& provenance = nullptr);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Net& net,
                     const nlohmann::json& provenance = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fairspec
