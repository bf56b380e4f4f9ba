#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusionfm/embedstore.hpp"

namespace fusionfm {

struct SynthExpert {
    std::string name;
    std::uint32_t dim = 8;
    double separation = 0.0;
    double noise_sigma = 1.0;
    std::vector<int> informative_classes;  // empty = no class is shifted
};

struct SynthSpec {
    std::size_t n_per_class = 100;
    int num_classes = 2;
    std::vector<SynthExpert> experts;
    std::uint64_t seed = 0;
    std::string task = "synthetic";

    void validate() const;
};

struct SynthBenchmark {
    SampleManifest manifest;
    std::vector<EmbeddingSet> sets;
};

/// Class c of expert e is drawn from N(separation·u_c, sigma²·I) when c is
/// informative for e and N(0, sigma²·I) otherwise, where u_c is the c-th
/// standard basis vector. Sample ids interleave the classes; splits are left
/// unassigned.
SynthBenchmark gen_synthetic_benchmark(const SynthSpec& spec);

// Separation used by gen_complementary_pair for each expert's class.
inline constexpr double kComplementarySeparation = 3.0;

/// Three classes, two experts: "A" shifts only class 0 and "B" shifts only
/// class 1, so neither separates class 2 on its own.
SynthBenchmark gen_complementary_pair(std::uint32_t dim, std::size_t n_per_class, std::uint64_t seed);

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json synth_spec_to_json(const SynthSpec& spec);

}  // namespace fusionfm
