#pragma once

#include <map>
#include <string>
#include <vector>

#include "spritediff/model.hpp"
#include "spritediff/trainer.hpp"

#include <json.hpp>

namespace spritediff {

// Checkpoint file = magic line, manifest byte count line, JSON manifest,
// then a payload of contiguous little-endian float64 buffers whose offsets
// tile the payload exactly. Load -> save round-trips byte-identically.
inline constexpr const char* kCheckpointMagic = "spritediff-checkpoint-v1";

struct LoadedCheckpoint {
    Model model;
    nlohmann::json manifest;
    bool has_optimizer = false;
    int64_t optimizer_step = 0;
    std::map<std::string, std::vector<double>> opt_m, opt_v;
    TrainConfig last_train;
    bool has_train_config = false;
};

void save_checkpoint(const std::string& path, const Model& model,
                     const StageOptimizer* opt = nullptr,
                     const TrainConfig* train_cfg = nullptr);

LoadedCheckpoint load_checkpoint(const std::string& path);

// Re-attaches saved Adam moments to a freshly built stage optimizer.
void restore_optimizer(StageOptimizer& opt, const LoadedCheckpoint& ckpt);

nlohmann::json train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace spritediff
