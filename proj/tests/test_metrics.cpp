#include <cmath>

#include <gtest/gtest.h>

#include "fusionfm/error.hpp"
#include "fusionfm/metrics.hpp"
#include "oracles.hpp"

namespace fusionfm {
namespace {

PredictionTable binary_table(const std::vector<double>& p1, const std::vector<int>& labels) {
    PredictionTable t;
    t.num_classes = 2;
    for (const double p : p1) {
        t.scores.push_back(1.0 - p);
        t.scores.push_back(p);
    }
    t.labels = labels;
    return t;
}

TEST(RocAuc, Examples) {
    EXPECT_EQ(roc_auc(Vec{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
    const Vec s{0.3, 0.7, 0.4, 0.6};
    const std::vector<int> y{0, 1, 1, 0};
    EXPECT_EQ(oracle::pairwise_auc_value({0.3, 0.7, 0.4, 0.6}, y), 0.75);
    EXPECT_EQ(roc_auc(s, y), 0.75);
    EXPECT_EQ(roc_auc(Vec{0.5, 0.5, 0.5, 0.5}, std::vector<int>{0, 1, 0, 1}), 0.5);
}

TEST(RocAuc, SingleClassIsUndefined) {
    try {
        roc_auc(Vec{0.1, 0.2}, std::vector<int>{1, 1});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kMetricUndefined);
    }
}

TEST(RocAuc, MatchesPairwiseOracleWithTies) {
    Rng rng(21);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<double> s(n);
        std::vector<int> y(n);
        const std::size_t levels = 1 + rng.below(8);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = rng.below(2) == 0 ? static_cast<double>(rng.below(levels)) / 8.0 : rng.uniform();
            y[i] = static_cast<int>(rng.below(2));
        }
        y[0] = 0;
        y[1] = 1;
        EXPECT_EQ(roc_auc(s, y), oracle::pairwise_auc_value(s, y));
    }
}

TEST(RocAuc, ComplementAndMonotoneInvariance) {
    Rng rng(22);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(40);
        Vec s(n);
        std::vector<int> y(n), flipped(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = std::round(rng.uniform(-3, 3) * 4) / 4;
            y[i] = static_cast<int>(rng.below(2));
        }
        y[0] = 0;
        y[1] = 1;
        for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - y[i];
        const double auc = roc_auc(s, y);
        EXPECT_NEAR(roc_auc(s, flipped), 1.0 - auc, 1e-12);
        Vec t(n);
        for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(2 * s[i]) + 5;
        EXPECT_EQ(roc_auc(t, y), auc);
        // Order independence: reversing rows changes nothing.
        Vec rs(s.rbegin(), s.rend());
        std::vector<int> ry(y.rbegin(), y.rend());
        EXPECT_EQ(roc_auc(rs, ry), auc);
    }
}

TEST(MacroAuc, BinaryReducesToColumnOne) {
    const auto t = binary_table({0.3, 0.7, 0.4, 0.6}, {0, 1, 1, 0});
    EXPECT_EQ(macro_auc_ovr(t), roc_auc(t.column(1), t.labels));
}

TEST(MacroAuc, PerfectAndUniform) {
    PredictionTable perfect;
    perfect.num_classes = 3;
    perfect.scores = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    perfect.labels = {0, 1, 2};
    EXPECT_EQ(macro_auc_ovr(perfect), 1.0);
    PredictionTable uniform = perfect;
    uniform.scores.assign(9, 1.0 / 3.0);
    EXPECT_EQ(macro_auc_ovr(uniform), 0.5);
    uniform.labels = {0, 1, 1};
    EXPECT_THROW(macro_auc_ovr(uniform), Error);
}

TEST(F1, Examples) {
    // TP=2, FP=1, FN=1, TN=1
    const auto t = binary_table({0.9, 0.8, 0.7, 0.2, 0.1}, {1, 1, 0, 1, 0});
    EXPECT_NEAR(f1_score(t), 2.0 / 3.0, 1e-15);
    EXPECT_EQ(f1_score(binary_table({0.9, 0.1}, {1, 0})), 1.0);
    EXPECT_EQ(f1_score(binary_table({0.1, 0.2}, {1, 0})), 0.0);
}

TEST(F1, MacroFlagsDegenerateClasses) {
    PredictionTable t;
    t.num_classes = 3;
    t.scores = {1, 0, 0, 0, 1, 0, 0, 1, 0};
    t.labels = {0, 1, 1};
    const auto r = f1_detail(t);
    EXPECT_NEAR(r.value, (1.0 + 1.0 + 0.0) / 3.0, 1e-15);
    EXPECT_EQ(r.degenerate_classes, (std::vector<int>{2}));
}

TEST(F1, TiesPredictLowerClass) {
    EXPECT_EQ(argmax(Vec{0.5, 0.5}), 0);
    EXPECT_EQ(f1_score(binary_table({0.5, 0.5}, {1, 0})), 0.0);
}

TEST(Accuracy, Examples) {
    EXPECT_EQ(accuracy(binary_table({0.9, 0.1}, {1, 0})), 1.0);
    EXPECT_EQ(accuracy(binary_table({0.1, 0.9}, {1, 0})), 0.0);
    EXPECT_EQ(accuracy(binary_table({0.9, 0.1, 0.8, 0.3}, {1, 0, 0, 0})), 0.75);
}

TEST(Percentile, LinearInterpolation) {
    const Vec v{1, 2, 3, 4, 5};
    EXPECT_EQ(percentile_linear(v, 0.0), 1.0);
    EXPECT_EQ(percentile_linear(v, 1.0), 5.0);
    EXPECT_EQ(percentile_linear(v, 0.5), 3.0);
    EXPECT_DOUBLE_EQ(percentile_linear(v, 0.1), 1.4);
    EXPECT_DOUBLE_EQ(percentile_linear(Vec{10, 20}, 0.975), 19.75);
}

PredictionTable bernoulli_accuracy_table(std::size_t n, double p_correct, Rng& rng) {
    std::vector<double> p1;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng.below(2));
        const bool correct = rng.uniform() < p_correct;
        const int predicted = correct ? label : 1 - label;
        y.push_back(label);
        p1.push_back(predicted == 1 ? 0.8 : 0.2);
    }
    return binary_table(p1, y);
}

TEST(Bootstrap, DeterministicAndOrdered) {
    Rng rng(1);
    const auto t = bernoulli_accuracy_table(80, 0.7, rng);
    const auto a = bootstrap_ci(accuracy, t, 300, 0.05, 17);
    const auto b = bootstrap_ci(accuracy, t, 300, 0.05, 17);
    EXPECT_EQ(a.point, b.point);
    EXPECT_EQ(a.ci_low, b.ci_low);
    EXPECT_EQ(a.ci_high, b.ci_high);
    EXPECT_LE(a.ci_low, a.point);
    EXPECT_GE(a.ci_high, a.point);
    const auto c = bootstrap_ci(accuracy, t, 300, 0.05, 18);
    EXPECT_TRUE(c.ci_low != a.ci_low || c.ci_high != a.ci_high);
}

TEST(Bootstrap, ZeroVarianceCollapses) {
    const auto t = binary_table({0.9, 0.2, 0.7, 0.1}, {1, 0, 1, 0});
    const auto r = bootstrap_ci(accuracy, t, 200, 0.05, 3);
    EXPECT_EQ(r.point, 1.0);
    EXPECT_EQ(r.ci_low, 1.0);
    EXPECT_EQ(r.ci_high, 1.0);
}

TEST(Bootstrap, UndefinedResamplesAreRedrawn) {
    // One positive in 20: about 36% of resamples miss it.
    std::vector<double> p(20, 0.3);
    std::vector<int> y(20, 0);
    p[0] = 0.9;
    y[0] = 1;
    const auto r = bootstrap_ci(macro_auc_ovr, binary_table(p, y), 200, 0.05, 5);
    EXPECT_GT(r.redrawn, 0u);
    EXPECT_EQ(r.skipped, 0u);
    EXPECT_EQ(r.n_valid, 200u);
}

TEST(Bootstrap, TooFewValidValues) {
    const auto t = binary_table({0.4, 0.6}, {0, 1});
    try {
        bootstrap_ci(macro_auc_ovr, t, 5, 0.05, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kCiUnavailable);
    }
    // Without a defined point estimate there is nothing to bootstrap.
    try {
        bootstrap_ci(macro_auc_ovr, binary_table({0.4, 0.6}, {1, 1}), 50, 0.05, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kMetricUndefined);
    }
}

TEST(Bootstrap, SmallCoverageSimulation) {
    Rng rng(777);
    int covered = 0;
    constexpr int kTables = 100;
    for (int k = 0; k < kTables; ++k) {
        const auto t = bernoulli_accuracy_table(200, 0.7, rng);
        const auto r = bootstrap_ci(accuracy, t, 400, 0.05, static_cast<std::uint64_t>(k));
        covered += r.ci_low <= 0.7 && 0.7 <= r.ci_high;
        EXPECT_GE((r.ci_high - r.ci_low) / 2, 0.03);
        EXPECT_LE((r.ci_high - r.ci_low) / 2, 0.11);
    }
    EXPECT_GE(covered, 88);
}

TEST(Report, JsonRoundtripAndCsv) {
    Rng rng(2);
    auto table = bernoulli_accuracy_table(60, 0.8, rng);
    auto r = evaluate_report(table, 100, 0.05, 4);
    r.experiment_id = "exp-1";
    r.strategy = "gating";
    r.expert_subset = {"a", "b"};
    r.task = "demo";
    r.config_hash = "0123456789abcdef";
    r.test_split_hash = "fedcba9876543210";
    const auto json = report_to_json(r);
    const auto back = report_from_json(json);
    EXPECT_EQ(report_to_json(back), json);
    EXPECT_EQ(back.auc.point, r.auc.point);
    EXPECT_EQ(back.acc.low, r.acc.low);
    EXPECT_NE(json.find("\"split\": \"test\""), std::string::npos);

    const auto csv = report_to_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "experiment_id,config_hash,task,strategy,experts,metric,point,low,high,n_boot,seed");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_NE(csv.find("exp-1,0123456789abcdef,demo,gating,a+b,auc,"), std::string::npos);
    for (const auto m : {Metric::kAuc, Metric::kF1, Metric::kAcc}) {
        const auto& s = r.get(m);
        EXPECT_LE(s.low, s.high);
        EXPECT_GE(s.low, 0.0);
        EXPECT_LE(s.high, 1.0);
    }
}

}  // namespace
}  // namespace fusionfm
