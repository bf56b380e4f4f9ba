#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fusionfm/nncore.hpp"

namespace fusionfm {

/// Per-sample class probabilities with their true labels. `sample_ids` may
/// be left empty for anonymous tables (bootstrap resamples).
struct PredictionTable {
    int num_classes = 2;
    std::vector<std::string> sample_ids;
    Vec scores;  // row-major, size() × num_classes
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(scores).subspan(i * static_cast<std::size_t>(num_classes),
                                                       static_cast<std::size_t>(num_classes));
    }
    Vec column(int c) const;
    // Rows sum to 1 within 1e-6, labels in range, n ≥ 1.
    void validate() const;
};

// Index of the largest entry; ties resolve to the lower index.
int argmax(std::span<const double> row) noexcept;

/// Mann-Whitney AUC with ties counted as one half. The pair count is
/// accumulated in integers, so the result does not depend on input order.
/// Throws kMetricUndefined unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

double macro_auc_ovr(const PredictionTable& table);

struct F1Result {
    double value = 0.0;
    // Classes with neither true nor predicted instances (scored 0).
    std::vector<int> degenerate_classes;
};

// Binary: F1 of class 1. Multiclass: unweighted mean over classes.
F1Result f1_detail(const PredictionTable& table);
double f1_score(const PredictionTable& table);
double accuracy(const PredictionTable& table);

enum class Metric { kAuc, kF1, kAcc };
std::string_view metric_name(Metric metric) noexcept;

using MetricFn = std::function<double(const PredictionTable&)>;
MetricFn metric_function(Metric metric);

struct BootstrapResult {
    double point = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t n_boot = 0;
    std::size_t n_valid = 0;
    std::size_t skipped = 0;   // iterations abandoned after 100 undefined redraws
    std::size_t redrawn = 0;   // undefined resamples replaced by a redraw
};

// Linear interpolation between order statistics (the "linear" quantile
// definition). `sorted` must be ascending and non-empty.
double percentile_linear(std::span<const double> sorted, double q);

/// Percentile bootstrap. Iteration b draws its rows from a child stream
/// derived from (seed, b), so results do not depend on evaluation order.
BootstrapResult bootstrap_ci(const MetricFn& metric, const PredictionTable& table,
                             std::size_t n_boot = 1000, double alpha = 0.05,
                             std::uint64_t seed = 0);

struct MetricSummary {
    double point = 0.0;
    double low = 0.0;
    double high = 0.0;
};

struct MetricReport {
    std::string experiment_id;
    std::string strategy;
    std::vector<std::string> expert_subset;
    std::string task;
    std::string config_hash;
    std::string test_split_hash;
    MetricSummary auc;
    MetricSummary f1;
    MetricSummary acc;
    std::vector<int> f1_degenerate_classes;
    std::size_t n_test = 0;
    std::size_t n_boot = 1000;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    std::uint64_t train_seed = 0;
    std::uint64_t split_seed = 0;
    std::size_t skipped_resamples = 0;

    const MetricSummary& get(Metric metric) const;
};

/// Bootstraps AUC, F1 and ACC over the same resample stream.
MetricReport evaluate_report(const PredictionTable& table, std::size_t n_boot, double alpha,
                             std::uint64_t seed);

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(std::string_view text);
// One header line plus one row per metric.
std::string report_to_csv(const MetricReport& report);

}  // namespace fusionfm
