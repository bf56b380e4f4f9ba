#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusionfm/nncore.hpp"

namespace fusionfm {

/// Cached embeddings produced by one expert over one dataset. One row per
/// sample, stored as 32-bit floats exactly as they appear on disk.
struct EmbeddingSet {
    std::string expert_name;
    std::uint32_t dim = 0;
    std::vector<std::string> sample_ids;
    std::vector<float> vectors;  // row-major, sample_ids.size() × dim

    std::size_t size() const noexcept { return sample_ids.size(); }
    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(vectors).subspan(i * dim, dim);
    }

    void validate() const;

    bool operator==(const EmbeddingSet&) const = default;
};

inline constexpr std::array<char, 8> kEmbeddingMagic = {'F', 'U', 'S', 'E', 'M', 'B', '0', '1'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

// Binary layout (all integers little-endian):
//   magic "FUSEMB01" | u32 version | u32 name_len, name | u32 dim | u64 count
//   | count × (u32 id_len, id) | count × dim f32 LE, row-major.
void write_embedding_set(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet read_embedding_set(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_embedding_set(const EmbeddingSet& set);
EmbeddingSet decode_embedding_set(std::span<const std::uint8_t> bytes);

enum class Split { kTrain, kVal, kTest, kUnassigned };

std::string_view split_name(Split split) noexcept;
std::optional<Split> parse_split(std::string_view name) noexcept;

struct ManifestEntry {
    std::string sample_id;
    int label = 0;
    Split split = Split::kUnassigned;

    bool operator==(const ManifestEntry&) const = default;
};

struct SampleManifest {
    std::string task_name;
    int num_classes = 0;
    std::vector<ManifestEntry> entries;

    // Unique ids, labels in range, every class present.
    void validate() const;
    bool fully_assigned() const noexcept;

    bool operator==(const SampleManifest&) const = default;
};

// JSON-Lines: a header {"task", "num_classes"} then one {"id", "label",
// "split"?} object per line. Extra header keys are ignored on read.
SampleManifest load_manifest(const std::filesystem::path& path);
SampleManifest parse_manifest(std::string_view text);
void write_manifest(const std::filesystem::path& path, const SampleManifest& manifest,
                    const nlohmann::ordered_json& header_extra = nlohmann::ordered_json::object());

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

/// Per-class (train, val, test) counts. Overall split sizes follow
/// largest-remainder rounding of the ratios over the whole manifest; the
/// per-class counts are the closest integer table (each cell within one of
/// its exact quota) that reproduces those totals, preferring cells with the
/// largest fractional remainder. Ties are broken by a seeded class order.
std::vector<std::array<std::size_t, 3>> split_counts(std::span<const std::size_t> class_sizes,
                                                     const SplitRatios& ratios,
                                                     std::uint64_t seed);

/// Assigns every entry to train/val/test. Within a class the entries are
/// shuffled with a seeded stream and then sliced by split_counts().
SampleManifest stratified_split(const SampleManifest& manifest, const SplitRatios& ratios,
                                std::uint64_t seed);

struct AlignedSample {
    std::string sample_id;
    std::vector<Vec> features;  // one widened vector per expert, expert order
    int label = 0;
    Split split = Split::kUnassigned;
};

/// Inner join of a manifest and several experts' embeddings on sample id.
/// Immutable once assembled.
struct AlignedDataset {
    std::string task_name;
    int num_classes = 0;
    std::vector<std::string> expert_names;
    std::vector<std::size_t> dims;
    std::vector<AlignedSample> samples;  // manifest order
    std::vector<std::string> dropped_ids;

    std::vector<std::size_t> indices_of(Split split) const;
};

AlignedDataset assemble_dataset(const SampleManifest& manifest, std::span<const EmbeddingSet> sets,
                                std::span<const std::string> expert_subset);

}  // namespace fusionfm
