#pragma once

#include <filesystem>
#include <string>

#include "denomae/model.hpp"

#include "json.hpp"

namespace denomae {

uint32_t crc32(const void* data, size_t size, uint32_t seed = 0);

// "DMAE v1" checkpoint: magic, a canonical-JSON header carrying the model
// config, caller metadata and a parameter manifest (name/shape/offset/size/
// crc32 per tensor, optimizer moments included), then concatenated DTNSR
// payloads. Loading verifies every checksum; save-load-save is
// byte-identical.
void save_checkpoint(const model::ModelState& state, const nlohmann::json& extra,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
    model::ModelState state;
    nlohmann::json extra;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace denomae
