#include "fusionfm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fusionfm/error.hpp"

namespace fusionfm {

void SynthSpec::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfig, "synth: " + msg); };
    if (num_classes < 2) fail("num_classes must be at least 2");
    if (n_per_class < 4) fail("n_per_class must be at least 4");
    if (experts.empty()) fail("at least one expert is required");
    for (std::size_t i = 0; i < experts.size(); ++i) {
        const auto& e = experts[i];
        if (e.name.empty()) fail("expert names must be non-empty");
        for (std::size_t j = 0; j < i; ++j) {
            if (experts[j].name == e.name) fail("duplicate expert name '" + e.name + "'");
        }
        if (e.dim < 2) fail("expert '" + e.name + "' needs dim >= 2");
        if (e.dim < static_cast<std::uint32_t>(num_classes)) {
            fail("expert '" + e.name + "' dim " + std::to_string(e.dim) + " cannot hold " +
                 std::to_string(num_classes) + " orthonormal class directions");
        }
        if (!(e.separation >= 0.0) || !std::isfinite(e.separation)) fail("separation must be >= 0");
        if (!(e.noise_sigma > 0.0) || !std::isfinite(e.noise_sigma)) fail("noise_sigma must be > 0");
        for (const int c : e.informative_classes) {
            if (c < 0 || c >= num_classes) fail("informative class out of range");
        }
    }
}

SynthBenchmark gen_synthetic_benchmark(const SynthSpec& spec) {
    spec.validate();
    const auto classes = static_cast<std::size_t>(spec.num_classes);
    const auto total = spec.n_per_class * classes;

    SynthBenchmark out;
    out.manifest.task_name = spec.task;
    out.manifest.num_classes = spec.num_classes;
    std::vector<std::string> ids;
    ids.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "s%06zu", i);
        ids.emplace_back(buf);
        out.manifest.entries.push_back({ids.back(), static_cast<int>(i % classes), Split::kUnassigned});
    }

    for (std::size_t e = 0; e < spec.experts.size(); ++e) {
        const auto& expert = spec.experts[e];
        EmbeddingSet set;
        set.expert_name = expert.name;
        set.dim = expert.dim;
        set.sample_ids = ids;
        set.vectors.resize(total * expert.dim);
        Rng rng(derive_seed(spec.seed, e));
        for (std::size_t i = 0; i < total; ++i) {
            const int label = static_cast<int>(i % classes);
            const bool shifted = std::find(expert.informative_classes.begin(), expert.informative_classes.end(),
                                           label) != expert.informative_classes.end();
            for (std::size_t d = 0; d < expert.dim; ++d) {
                double value = expert.noise_sigma * rng.normal();
                if (shifted && d == static_cast<std::size_t>(label)) value += expert.separation;
                set.vectors[i * expert.dim + d] = static_cast<float>(value);
            }
        }
        out.sets.push_back(std::move(set));
    }
    return out;
}

SynthBenchmark gen_complementary_pair(std::uint32_t dim, std::size_t n_per_class, std::uint64_t seed) {
    if (dim < 3) throw Error(ErrorCode::kConfig, "synth: complementary pair needs dim >= 3");
    SynthSpec spec;
    spec.n_per_class = n_per_class;
    spec.num_classes = 3;
    spec.seed = seed;
    spec.task = "complementary";
    spec.experts = {
        SynthExpert{"A", dim, kComplementarySeparation, 1.0, {0}},
        SynthExpert{"B", dim, kComplementarySeparation, 1.0, {1}},
    };
    return gen_synthetic_benchmark(spec);
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec spec;
    try {
        spec.n_per_class = j.at("n_per_class").get<std::size_t>();
        spec.num_classes = j.at("num_classes").get<int>();
        spec.seed = j.value("seed", spec.seed);
        spec.task = j.value("task", spec.task);
        for (const auto& node : j.at("experts")) {
            SynthExpert e;
            e.name = node.at("name").get<std::string>();
            e.dim = node.at("dim").get<std::uint32_t>();
            e.separation = node.value("separation", e.separation);
            e.noise_sigma = node.value("noise_sigma", e.noise_sigma);
            if (node.contains("informative_classes")) {
                e.informative_classes = node.at("informative_classes").get<std::vector<int>>();
            } else {
                for (int c = 0; c < spec.num_classes; ++c) e.informative_classes.push_back(c);
            }
            spec.experts.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kConfig, std::string("synth section: ") + e.what());
    }
    spec.validate();
    return spec;
}

nlohmann::ordered_json synth_spec_to_json(const SynthSpec& spec) {
    nlohmann::ordered_json experts = nlohmann::ordered_json::array();
    for (const auto& e : spec.experts) {
        experts.push_back({{"name", e.name},
                           {"dim", e.dim},
                           {"separation", e.separation},
                           {"noise_sigma", e.noise_sigma},
                           {"informative_classes", e.informative_classes}});
    }
    return {{"n_per_class", spec.n_per_class},
            {"num_classes", spec.num_classes},
            {"seed", spec.seed},
            {"task", spec.task},
            {"experts", experts}};
}

}  // namespace fusionfm
