#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "uavpd/nn.hpp"

namespace uavpd {

// Checkpoint container: 8-byte magic, little-endian u64 header length, JSON
// header (embedded config record plus tensor directory), raw float32 data in
// directory order. Byte-stable for identical parameter values.
void save_checkpoint(const std::filesystem::path& path, const nn::ParamStore& store,
                     const nlohmann::ordered_json& config);

// Loads tensor data into an already-constructed store; shapes must match.
// Returns the embedded config record.
nlohmann::json load_checkpoint(const std::filesystem::path& path, nn::ParamStore& store);

// Reads only the embedded config record.
nlohmann::json read_checkpoint_config(const std::filesystem::path& path);

// Loads only parameters whose name starts with `prefix` (pretrained encoder
// reuse); silently skips others. Returns the number of tensors loaded.
int load_checkpoint_prefix(const std::filesystem::path& path, nn::ParamStore& store,
                           const std::string& prefix);

}  // namespace uavpd
