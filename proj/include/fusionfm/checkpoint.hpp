#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "fusionfm/fusion.hpp"
#include "fusionfm/train.hpp"

namespace fusionfm {

using ordered_json = nlohmann::ordered_json;

// Shortest decimal string that parses back to the same double.
std::string exact_decimal(double value);
double parse_exact_decimal(std::string_view text);

ordered_json fusion_config_to_json(const FusionConfig& config);
// Missing optional fields take their defaults; `num_classes` may be absent
// when it is supplied later from the manifest.
FusionConfig fusion_config_from_json(const nlohmann::json& j);

ordered_json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct CheckpointMeta {
    std::string experiment_id;
    std::string config_hash;
};

/// Checkpoint document: metadata, both configs, and every tensor with its
/// values as round-trip decimal strings.
std::string checkpoint_to_json(const Checkpoint& checkpoint, const CheckpointMeta& meta = {});
Checkpoint checkpoint_from_json(std::string_view text, CheckpointMeta* meta = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint,
                     const CheckpointMeta& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace fusionfm
