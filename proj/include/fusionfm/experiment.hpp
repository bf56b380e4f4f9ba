#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusionfm/embedstore.hpp"
#include "fusionfm/error.hpp"
#include "fusionfm/fusion.hpp"
#include "fusionfm/synth.hpp"
#include "fusionfm/train.hpp"

namespace fusionfm {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitRuntime = 3;

struct DataConfig {
    std::optional<fs::path> manifest;
    std::vector<fs::path> embeddings;
    std::optional<SynthSpec> synth;
};

struct SplitConfig {
    bool use_manifest = false;
    SplitRatios ratios;
    std::uint64_t seed = 0;
};

struct EvalConfig {
    std::size_t n_boot = 1000;
    double alpha = 0.05;
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    std::string experiment_id;
    DataConfig data;
    SplitConfig split;
    FusionConfig model;  // num_classes is taken from the data
    TrainConfig train;
    EvalConfig eval;
    fs::path output_dir;
    // Canonical form of every field except output_dir; hashed for identity.
    nlohmann::json canonical;

    std::string config_hash() const;
};

struct CliOverrides {
    std::optional<std::uint64_t> seed;  // replaces train.seed
    std::optional<fs::path> out;        // wins over FUSIONFM_OUT and output_dir
};

/// Parses the JSON config. Relative data paths resolve against the config
/// file's directory.
ExperimentConfig load_experiment_config(const fs::path& path, const CliOverrides& overrides = {});
ExperimentConfig parse_experiment_config(const nlohmann::json& j, const fs::path& base_dir,
                                         const CliOverrides& overrides = {});

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

struct Finding {
    ErrorCode code;
    std::string message;
};

struct LoadedData {
    SampleManifest manifest;
    std::vector<EmbeddingSet> sets;
};

LoadedData load_data(const ExperimentConfig& config);

/// Applies the configured split (or checks the manifest's own) and joins the
/// selected experts.
AlignedDataset prepare_dataset(const ExperimentConfig& config, const LoadedData& data,
                               SampleManifest* split_manifest = nullptr);

std::vector<Finding> validate_experiment(const fs::path& config_path, const CliOverrides& overrides = {});

// Hash of the task name and the ordered test-split sample ids.
std::string test_split_hash(const AlignedDataset& dataset);

int cmd_validate(const fs::path& config_path, std::ostream& out, const CliOverrides& overrides = {});
int cmd_run(const fs::path& config_path, std::ostream& out, std::ostream& err,
            const CliOverrides& overrides = {});
int cmd_compare(const std::vector<fs::path>& reports, std::ostream& out, std::ostream& err,
                const std::optional<fs::path>& csv_path = std::nullopt);
int cmd_synth(const fs::path& config_path, std::ostream& out, std::ostream& err,
              const CliOverrides& overrides = {});

// Output file names inside output_dir.
inline constexpr const char* kCheckpointFile = "checkpoint.json";
inline constexpr const char* kTrainLogFile = "train_log.jsonl";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kReportCsvFile = "report.csv";
inline constexpr const char* kRunMetaFile = "run_meta.json";
inline constexpr const char* kSplitManifestFile = "manifest_split.jsonl";

}  // namespace fusionfm
