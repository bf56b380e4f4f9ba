#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fusionfm/error.hpp"
#include "fusionfm/train.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace fusionfm {
namespace {

TEST(SmoothedCe, PlainCrossEntropyAtZeroEpsilon) {
    const auto r = label_smoothed_ce(Vec{0.5, 0.5}, 0, 0.0);
    EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
    EXPECT_NEAR(r.loss, 0.693147, 5e-7);
}

TEST(SmoothedCe, UniformGivesLogK) {
    for (int k = 2; k <= 6; ++k) {
        const Vec p(static_cast<std::size_t>(k), 1.0 / k);
        for (const double eps : {0.0, 0.1, 0.5, 0.9}) {
            EXPECT_NEAR(label_smoothed_ce(p, k - 1, eps).loss, std::log(static_cast<double>(k)), 1e-12);
        }
    }
}

TEST(SmoothedCe, HandExample) {
    const double direct = oracle::smoothed_ce({0.9, 0.1}, 0, 0.1);
    EXPECT_NEAR(direct, 0.215221, 1e-6);
    EXPECT_NEAR(label_smoothed_ce(Vec{0.9, 0.1}, 0, 0.1).loss, direct, 1e-15);
}

TEST(SmoothedCe, MixtureIdentityAndGradientSum) {
    Rng rng(6);
    for (int trial = 0; trial < 500; ++trial) {
        Vec z(2 + rng.below(5));
        for (auto& v : z) v = rng.uniform(-6, 6);
        const auto p = softmax(z);
        const int y = static_cast<int>(rng.below(p.size()));
        const double eps = rng.uniform(0.0, 0.99);
        const auto r = label_smoothed_ce(p, y, eps);
        double mean_ce = 0.0;
        for (const double v : p) mean_ce += -std::log(v);
        mean_ce /= static_cast<double>(p.size());
        EXPECT_NEAR(r.loss, (1 - eps) * -std::log(p[static_cast<std::size_t>(y)]) + eps * mean_ce, 1e-12);
        EXPECT_NEAR(std::accumulate(r.dlogits.begin(), r.dlogits.end(), 0.0), 0.0, 1e-12);
    }
}

TEST(SmoothedCe, LowerBoundAttainedAtTarget) {
    for (const double eps : {0.05, 0.1, 0.3}) {
        const std::size_t k = 4;
        Vec q(k, eps / k);
        q[2] += 1 - eps;
        double entropy = 0.0;
        for (const double v : q) entropy -= v * std::log(v);
        const auto at_q = label_smoothed_ce(q, 2, eps);
        EXPECT_NEAR(at_q.loss, entropy, 1e-12);
        for (const double d : at_q.dlogits) EXPECT_NEAR(d, 0.0, 1e-15);
        EXPECT_GT(label_smoothed_ce(Vec{0.25, 0.25, 0.25, 0.25}, 2, eps).loss, entropy);
    }
}

TEST(SmoothedCe, LogitGradientMatchesFiniteDifferences) {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        Vec z(2 + rng.below(4));
        for (auto& v : z) v = rng.uniform(-3, 3);
        const int y = static_cast<int>(rng.below(z.size()));
        const double eps = rng.uniform(0, 0.5);
        const auto g = label_smoothed_ce_logits(z, y, eps).dlogits;
        const auto fd = finite_diff_grad(
            [&](std::span<const double> w) { return label_smoothed_ce_logits(w, y, eps).loss; }, z, 1e-5);
        for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(g[i], fd[i], 1e-8);
    }
}

TEST(SmoothedCe, ClampAndErrors) {
    EXPECT_NEAR(label_smoothed_ce(Vec{1.0, 0.0}, 1, 0.0).loss, -std::log(1e-12), 1e-9);
    EXPECT_THROW(label_smoothed_ce(Vec{0.5, 0.5}, 0, 1.0), Error);
    EXPECT_THROW(label_smoothed_ce(Vec{0.5, 0.5}, 0, -0.1), Error);
    EXPECT_THROW(label_smoothed_ce(Vec{0.6, 0.6}, 0, 0.1), Error);
    EXPECT_THROW(label_smoothed_ce(Vec{0.5, 0.5}, 2, 0.1), Error);
}

FusionModel model_with(Strategy s, std::size_t n) {
    FusionConfig c;
    c.strategy = s;
    for (std::size_t i = 0; i < n; ++i) c.expert_subset.push_back("e" + std::to_string(i));
    const std::vector<std::size_t> dims(n, 3);
    return init_model(c, dims, 0);
}

TEST(Llrd, Rates) {
    const auto gating = model_with(Strategy::kGating, 2);
    const auto r = llrd_rates(gating, 1e-4, 0.75);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_NEAR(r.at(0), 0.5625e-4, 1e-18);
    EXPECT_NEAR(r.at(1), 0.75e-4, 1e-18);
    EXPECT_EQ(r.at(2), 1e-4);
    for (const auto& [d, lr] : llrd_rates(gating, 3e-3, 1.0)) EXPECT_EQ(lr, 3e-3) << d;
    const auto single = llrd_rates(model_with(Strategy::kSingle, 1), 1e-4, 0.5);
    EXPECT_EQ(single.at(1), 1e-4);
    EXPECT_EQ(single.at(0), 0.5e-4);
    EXPECT_THROW(llrd_rates(gating, 1e-4, 0.0), Error);
}

TEST(Llrd, SingleGroupGetsBaseRate) {
    auto m = model_with(Strategy::kSingle, 1);
    for (auto& t : m.params) t.depth_group = 0;
    const auto r = llrd_rates(m, 2e-4, 0.3);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r.at(0), 2e-4);
}

std::vector<ParamTensor> one_weight(double value) {
    return {ParamTensor{"w", {1, 1}, {value}, 0}, ParamTensor{"b", {1}, {value}, 0}};
}

TEST(AdamW, FirstStep) {
    auto params = one_weight(0.0);
    auto state = OptimizerState::zeros_like(params);
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step(params, {{1.0}, {1.0}}, state, 1e-4, cfg);
    EXPECT_EQ(state.t, 1);
    EXPECT_NEAR(params[0].values[0], -1e-4 / (1 + 1e-8), 1e-20);
    EXPECT_NEAR(params[0].values[0], -9.9999999e-5, 1e-17);
}

TEST(AdamW, ZeroGradientNoDecay) {
    auto params = one_weight(0.7);
    auto state = OptimizerState::zeros_like(params);
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    for (int i = 0; i < 3; ++i) adamw_step(params, {{0.0}, {0.0}}, state, 1e-2, cfg);
    EXPECT_EQ(params[0].values[0], 0.7);
    EXPECT_EQ(state.t, 3);
}

TEST(AdamW, PureDecaySparesBiases) {
    auto params = one_weight(2.0);
    auto state = OptimizerState::zeros_like(params);
    TrainConfig cfg;
    cfg.weight_decay = 0.05;
    const double lr = 1e-2;
    double expected = 2.0;
    for (int i = 0; i < 5; ++i) {
        adamw_step(params, {{0.0}, {0.0}}, state, lr, cfg);
        expected *= 1 - lr * cfg.weight_decay;
        EXPECT_NEAR(params[0].values[0], expected, 1e-15);
    }
    EXPECT_EQ(params[1].values[0], 2.0);
}

TEST(AdamW, RejectsNonFiniteGradient) {
    auto params = one_weight(0.0);
    auto state = OptimizerState::zeros_like(params);
    EXPECT_THROW(adamw_step(params, {{std::nan("")}, {0.0}}, state, 1e-3, TrainConfig{}), Error);
    EXPECT_EQ(state.t, 0);
}

TEST(TrainConfig, Validate) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.base_lr = 0;
    EXPECT_THROW(c.validate(), Error);
    c = TrainConfig{};
    c.epochs = 0;
    EXPECT_THROW(c.validate(), Error);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), Error);
}

SynthBenchmark separable(std::size_t n_per_class, std::uint64_t seed, double separation = 4.0) {
    SynthSpec spec;
    spec.n_per_class = n_per_class;
    spec.num_classes = 2;
    spec.seed = seed;
    spec.experts = {SynthExpert{"x", 8, separation, 1.0, {0, 1}}};
    return gen_synthetic_benchmark(spec);
}

TEST(Train, SeparableDataReachesHighValAuc) {
    const auto data = fixture::split_and_join(separable(500, 3), {"x"}, 3);
    TrainConfig tc;
    tc.seed = 3;
    const auto r = fixture::fit(data, Strategy::kSingle, tc);
    EXPECT_GE(r.best_val_auc, 0.99);
}

TEST(Train, BestCheckpointIsMaxOverEpochs) {
    const auto data = fixture::split_and_join(separable(60, 4, 1.0), {"x"}, 4);
    FusionConfig c;
    c.expert_subset = {"x"};
    c.d_fuse = 4;
    TrainConfig tc;
    tc.epochs = 25;
    tc.base_lr = 3e-3;
    std::vector<EpochRecord> seen;
    const auto r = train(init_model(c, data.dims, 2), data, tc, macro_auc_ovr,
                         [&](const EpochRecord& e) { seen.push_back(e); });
    ASSERT_EQ(seen.size(), 25u);
    ASSERT_EQ(r.history.size(), 25u);
    double best = -1.0;
    int best_epoch = 0;
    for (const auto& e : r.history) {
        if (e.val_auc > best) {
            best = e.val_auc;
            best_epoch = e.epoch;
        }
    }
    EXPECT_EQ(r.best.val_auc, best);
    EXPECT_EQ(r.best.epoch, best_epoch);
    EXPECT_EQ(macro_auc_ovr(predict(r.best.model, data, Split::kVal)), best);
    EXPECT_EQ(r.history.front().lr_by_group, llrd_rates(r.best.model, tc.base_lr, tc.llrd_decay));
}

TEST(Train, DeterministicInSeed) {
    const auto data = fixture::split_and_join(separable(40, 5), {"x"}, 5);
    FusionConfig c;
    c.strategy = Strategy::kSingle;
    c.expert_subset = {"x"};
    c.d_fuse = 4;
    TrainConfig tc;
    tc.epochs = 1;
    tc.seed = 9;
    const auto model = init_model(c, data.dims, 1);
    const auto a = train(model, data, tc);
    const auto b = train(model, data, tc);
    EXPECT_EQ(a.best.model, b.best.model);
    EXPECT_EQ(a.best.val_auc, b.best.val_auc);
    tc.seed = 10;
    tc.epochs = 3;
    EXPECT_NE(train(model, data, tc).best.model, a.best.model);
}

TEST(Train, ShuffledLabelsStayNearChance) {
    auto bench = separable(500, 6);
    Rng rng(60);
    std::vector<int> labels;
    for (const auto& e : bench.manifest.entries) labels.push_back(e.label);
    rng.shuffle(labels);
    for (std::size_t i = 0; i < labels.size(); ++i) bench.manifest.entries[i].label = labels[i];
    const auto data = fixture::split_and_join(bench, {"x"}, 6);
    TrainConfig tc;
    tc.seed = 6;
    const auto r = fixture::fit(data, Strategy::kSingle, tc);
    EXPECT_GE(r.test_auc, 0.35);
    EXPECT_LE(r.test_auc, 0.65);
}

TEST(Train, EmptySplitsAreRejected) {
    auto bench = separable(10, 1);
    for (auto& e : bench.manifest.entries) e.split = Split::kTrain;
    const auto data = assemble_dataset(bench.manifest, bench.sets, std::vector<std::string>{"x"});
    FusionConfig c;
    c.expert_subset = {"x"};
    try {
        train(init_model(c, data.dims, 0), data, TrainConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kSplitMissing);
    }
}

TEST(EpochLog, JsonRecord) {
    EpochRecord r{3, 0.5, 0.75, {{0, 1e-4}}, 12.5};
    EXPECT_EQ(epoch_record_json(r),
              R"({"epoch":3,"mean_train_loss":0.5,"val_auc":0.75,"lr_by_group":{"0":0.0001},"wall_ms":12.5})");
}

}  // namespace
}  // namespace fusionfm
