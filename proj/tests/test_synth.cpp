#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "fusionfm/error.hpp"
#include "fusionfm/synth.hpp"
#include "fixtures.hpp"

namespace fusionfm {
namespace {

namespace fs = std::filesystem;

SynthSpec two_experts(std::uint64_t seed) {
    SynthSpec spec;
    spec.n_per_class = 400;
    spec.num_classes = 3;
    spec.seed = seed;
    spec.experts = {SynthExpert{"p", 4, 2.5, 0.5, {0, 2}}, SynthExpert{"q", 3, 1.0, 2.0, {1}}};
    return spec;
}

TEST(Synth, ShapesIdsAndUnassignedSplits) {
    const auto b = gen_synthetic_benchmark(two_experts(1));
    ASSERT_EQ(b.manifest.entries.size(), 1200u);
    EXPECT_EQ(b.manifest.entries[0].sample_id, "s000000");
    EXPECT_EQ(b.manifest.entries[4].label, 1);
    for (const auto& e : b.manifest.entries) EXPECT_EQ(e.split, Split::kUnassigned);
    ASSERT_EQ(b.sets.size(), 2u);
    EXPECT_EQ(b.sets[1].dim, 3u);
    EXPECT_EQ(b.sets[1].vectors.size(), 1200u * 3);
    for (const auto& s : b.sets) EXPECT_NO_THROW(s.validate());
    EXPECT_NO_THROW(b.manifest.validate());
}

TEST(Synth, ClassMeansMatchSpec) {
    const auto spec = two_experts(2);
    const auto b = gen_synthetic_benchmark(spec);
    for (std::size_t e = 0; e < spec.experts.size(); ++e) {
        const auto& ex = spec.experts[e];
        const double tol = 5 * ex.noise_sigma / std::sqrt(static_cast<double>(spec.n_per_class));
        for (int c = 0; c < spec.num_classes; ++c) {
            Vec mean(ex.dim, 0.0);
            for (std::size_t i = 0; i < b.manifest.entries.size(); ++i) {
                if (b.manifest.entries[i].label != c) continue;
                for (std::size_t d = 0; d < ex.dim; ++d) mean[d] += b.sets[e].row(i)[d];
            }
            const bool informative =
                std::find(ex.informative_classes.begin(), ex.informative_classes.end(), c) != ex.informative_classes.end();
            for (std::size_t d = 0; d < ex.dim; ++d) {
                const double expected = informative && d == static_cast<std::size_t>(c) ? ex.separation : 0.0;
                EXPECT_NEAR(mean[d] / static_cast<double>(spec.n_per_class), expected, tol) << ex.name << " class " << c;
            }
        }
    }
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Synth, SameSeedGivesIdenticalFiles) {
    const auto dir = fs::temp_directory_path() / "fusionfm_synth_files";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto a = gen_synthetic_benchmark(two_experts(3));
    const auto b = gen_synthetic_benchmark(two_experts(3));
    write_embedding_set(dir / "a.emb", a.sets[0]);
    write_embedding_set(dir / "b.emb", b.sets[0]);
    EXPECT_EQ(slurp(dir / "a.emb"), slurp(dir / "b.emb"));
    EXPECT_EQ(read_embedding_set(dir / "a.emb"), a.sets[0]);
    EXPECT_NE(gen_synthetic_benchmark(two_experts(4)).sets[0], a.sets[0]);
    fs::remove_all(dir);
}

TEST(Synth, Validation) {
    auto spec = two_experts(1);
    spec.experts[1].dim = 2;  // fewer dims than classes
    EXPECT_THROW(gen_synthetic_benchmark(spec), Error);
    spec = two_experts(1);
    spec.n_per_class = 3;
    EXPECT_THROW(gen_synthetic_benchmark(spec), Error);
    spec = two_experts(1);
    spec.experts[0].noise_sigma = 0;
    EXPECT_THROW(gen_synthetic_benchmark(spec), Error);
    spec = two_experts(1);
    spec.experts[0].informative_classes = {3};
    EXPECT_THROW(gen_synthetic_benchmark(spec), Error);
    EXPECT_THROW(gen_complementary_pair(2, 10, 1), Error);
}

TEST(Synth, JsonSpecRoundtripAndDefaults) {
    const auto spec = two_experts(9);
    const auto back = synth_spec_from_json(nlohmann::json::parse(synth_spec_to_json(spec).dump()));
    EXPECT_EQ(synth_spec_to_json(back), synth_spec_to_json(spec));
    const auto j = nlohmann::json::parse(R"({"n_per_class": 10, "num_classes": 2, "experts": [{"name": "x", "dim": 4, "separation": 1}]})");
    const auto parsed = synth_spec_from_json(j);
    EXPECT_EQ(parsed.experts[0].informative_classes, (std::vector<int>{0, 1}));
    EXPECT_EQ(parsed.experts[0].noise_sigma, 1.0);
}

TEST(Synth, ComplementaryPairStructure) {
    const auto b = gen_complementary_pair(8, 200, 7);
    EXPECT_EQ(b.manifest.num_classes, 3);
    EXPECT_EQ(b.manifest.task_name, "complementary");
    ASSERT_EQ(b.sets.size(), 2u);
    EXPECT_EQ(b.sets[0].expert_name, "A");
    EXPECT_EQ(b.sets[1].expert_name, "B");
    // Expert A lifts only class 0 along axis 0, B only class 1 along axis 1.
    double a0 = 0, a1 = 0, b1 = 0, b0 = 0;
    for (std::size_t i = 0; i < b.manifest.entries.size(); ++i) {
        const int y = b.manifest.entries[i].label;
        if (y == 0) {
            a0 += b.sets[0].row(i)[0];
            b0 += b.sets[1].row(i)[0];
        }
        if (y == 1) {
            a1 += b.sets[0].row(i)[1];
            b1 += b.sets[1].row(i)[1];
        }
    }
    EXPECT_NEAR(a0 / 200, kComplementarySeparation, 0.36);
    EXPECT_NEAR(b1 / 200, kComplementarySeparation, 0.36);
    EXPECT_NEAR(a1 / 200, 0.0, 0.36);
    EXPECT_NEAR(b0 / 200, 0.0, 0.36);
}

TEST(Synth, NullModelProbeIsNearChance) {
    SynthSpec spec;
    spec.n_per_class = 500;
    spec.num_classes = 2;
    spec.seed = 12;
    spec.experts = {SynthExpert{"n", 8, 0.0, 1.0, {0, 1}}};
    const auto data = fixture::split_and_join(gen_synthetic_benchmark(spec), {"n"}, 12);
    ASSERT_EQ(data.indices_of(Split::kTest).size(), 200u);
    TrainConfig tc;
    tc.seed = 12;
    const auto r = fixture::fit(data, Strategy::kSingle, tc);
    EXPECT_GE(r.test_auc, 0.4);
    EXPECT_LE(r.test_auc, 0.6);
}

}  // namespace
}  // namespace fusionfm
