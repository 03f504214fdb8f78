#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "prefrank/model.hpp"

namespace prefrank {

// Run metadata carried alongside the parameters.
struct CheckpointMeta {
    uint64_t seed = 0;
    int64_t step = 0;
    std::string stage;  // "init", "sft", "dmpo", ...
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// File layout: 8-byte magic "PRCKPT01", little-endian uint64 header length,
// JSON header (version, config, seed, step, stage, tensor manifest), then
// the flat parameter blob as little-endian IEEE-754 doubles in layout order.
void save_checkpoint(const std::string& path, const Model& model,
                     const CheckpointMeta& meta);
Model load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace prefrank
