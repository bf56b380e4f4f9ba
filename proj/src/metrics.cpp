#include "fusionfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fusionfm/error.hpp"

namespace fusionfm {

Vec PredictionTable::column(int c) const {
    Vec out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = row(i)[static_cast<std::size_t>(c)];
    return out;
}

void PredictionTable::validate() const {
    if (num_classes < 2) throw Error(ErrorCode::kShape, "prediction table needs at least 2 classes");
    if (labels.empty()) throw Error(ErrorCode::kShape, "prediction table is empty");
    if (scores.size() != labels.size() * static_cast<std::size_t>(num_classes)) {
        throw Error(ErrorCode::kShape, "score matrix does not match the label count");
    }
    if (!sample_ids.empty() && sample_ids.size() != labels.size()) {
        throw Error(ErrorCode::kShape, "sample_ids do not match the label count");
    }
    for (std::size_t i = 0; i < size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw Error(ErrorCode::kShape, "label out of range in prediction table");
        }
        const auto r = row(i);
        if (!all_finite(r)) throw Error(ErrorCode::kNonFinite, "non-finite score in prediction table");
        const double total = std::accumulate(r.begin(), r.end(), 0.0);
        if (std::abs(total - 1.0) > 1e-6) {
            throw Error(ErrorCode::kShape, "prediction row " + std::to_string(i) + " does not sum to 1");
        }
    }
}

int argmax(std::span<const double> row) noexcept {
    int best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
        if (row[c] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    }
    return best;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error(ErrorCode::kShape, "roc_auc: length mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // twice_wins counts 2 per concordant pair and 1 per tie.
    std::uint64_t positives = 0;
    std::uint64_t negatives = 0;
    std::uint64_t twice_wins = 0;
    std::uint64_t negatives_below = 0;
    for (std::size_t start = 0; start < order.size();) {
        std::size_t end = start;
        std::uint64_t pos_here = 0;
        std::uint64_t neg_here = 0;
        while (end < order.size() && scores[order[end]] == scores[order[start]]) {
            if (labels[order[end]] != 0) ++pos_here; else ++neg_here;
            ++end;
        }
        twice_wins += pos_here * (2 * negatives_below + neg_here);
        negatives_below += neg_here;
        positives += pos_here;
        negatives += neg_here;
        start = end;
    }
    if (positives == 0 || negatives == 0) {
        throw Error(ErrorCode::kMetricUndefined, "AUC is undefined when only one class is present");
    }
    return static_cast<double>(twice_wins) /
           (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

double macro_auc_ovr(const PredictionTable& table) {
    if (table.num_classes == 2) {
        return roc_auc(table.column(1), table.labels);
    }
    double total = 0.0;
    std::vector<int> binary(table.size());
    for (int c = 0; c < table.num_classes; ++c) {
        for (std::size_t i = 0; i < table.size(); ++i) binary[i] = table.labels[i] == c ? 1 : 0;
        total += roc_auc(table.column(c), binary);
    }
    return total / static_cast<double>(table.num_classes);
}

F1Result f1_detail(const PredictionTable& table) {
    const auto classes = static_cast<std::size_t>(table.num_classes);
    std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto predicted = static_cast<std::size_t>(argmax(table.row(i)));
        const auto truth = static_cast<std::size_t>(table.labels[i]);
        if (predicted == truth) {
            ++tp[truth];
        } else {
            ++fp[predicted];
            ++fn[truth];
        }
    }
    F1Result out;
    auto class_f1 = [&](std::size_t c) {
        const auto denom = 2 * tp[c] + fp[c] + fn[c];
        if (denom == 0) {
            out.degenerate_classes.push_back(static_cast<int>(c));
            return 0.0;
        }
        return 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    };
    if (classes == 2) {
        out.value = class_f1(1);
    } else {
        double total = 0.0;
        for (std::size_t c = 0; c < classes; ++c) total += class_f1(c);
        out.value = total / static_cast<double>(classes);
    }
    return out;
}

double f1_score(const PredictionTable& table) { return f1_detail(table).value; }

double accuracy(const PredictionTable& table) {
    if (table.size() == 0) throw Error(ErrorCode::kShape, "accuracy of an empty table");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (argmax(table.row(i)) == table.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(table.size());
}

std::string_view metric_name(Metric metric) noexcept {
    switch (metric) {
        case Metric::kAuc: return "auc";
        case Metric::kF1: return "f1";
        case Metric::kAcc: return "acc";
    }
    return "auc";
}

MetricFn metric_function(Metric metric) {
    switch (metric) {
        case Metric::kAuc: return macro_auc_ovr;
        case Metric::kF1: return f1_score;
        case Metric::kAcc: return accuracy;
    }
    return macro_auc_ovr;
}

double percentile_linear(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw Error(ErrorCode::kCiUnavailable, "percentile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BootstrapResult bootstrap_ci(const MetricFn& metric, const PredictionTable& table, std::size_t n_boot,
                             double alpha, std::uint64_t seed) {
    table.validate();
    const auto n = table.size();
    if (n < 2) throw Error(ErrorCode::kCiUnavailable, "bootstrap needs at least 2 rows");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::kConfig, "alpha must lie in (0, 1)");
    constexpr std::size_t kMaxAttempts = 100;

    BootstrapResult result;
    result.n_boot = n_boot;
    result.point = metric(table);

    const auto classes = static_cast<std::size_t>(table.num_classes);
    PredictionTable sample;
    sample.num_classes = table.num_classes;
    sample.scores.resize(table.scores.size());
    sample.labels.resize(n);

    std::vector<double> values;
    values.reserve(n_boot);
    for (std::size_t b = 0; b < n_boot; ++b) {
        Rng rng(derive_seed(seed, b));
        bool done = false;
        for (std::size_t attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto src = static_cast<std::size_t>(rng.below(n));
                sample.labels[i] = table.labels[src];
                std::copy_n(table.scores.begin() + static_cast<std::ptrdiff_t>(src * classes), classes,
                            sample.scores.begin() + static_cast<std::ptrdiff_t>(i * classes));
            }
            try {
                values.push_back(metric(sample));
                done = true;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::kMetricUndefined) throw;
                ++result.redrawn;
            }
        }
        if (!done) ++result.skipped;
    }
    result.n_valid = values.size();
    if (values.size() < 10) {
        throw Error(ErrorCode::kCiUnavailable,
                    "only " + std::to_string(values.size()) + " valid bootstrap values");
    }
    std::sort(values.begin(), values.end());
    result.ci_low = percentile_linear(values, alpha / 2.0);
    result.ci_high = percentile_linear(values, 1.0 - alpha / 2.0);
    return result;
}

const MetricSummary& MetricReport::get(Metric metric) const {
    switch (metric) {
        case Metric::kAuc: return auc;
        case Metric::kF1: return f1;
        case Metric::kAcc: return acc;
    }
    return auc;
}

MetricReport evaluate_report(const PredictionTable& table, std::size_t n_boot, double alpha,
                             std::uint64_t seed) {
    MetricReport report;
    report.n_boot = n_boot;
    report.alpha = alpha;
    report.seed = seed;
    report.n_test = table.size();
    auto run = [&](Metric metric) {
        const auto r = bootstrap_ci(metric_function(metric), table, n_boot, alpha, seed);
        report.skipped_resamples += r.skipped;
        return MetricSummary{r.point, r.ci_low, r.ci_high};
    };
    report.auc = run(Metric::kAuc);
    report.f1 = run(Metric::kF1);
    report.acc = run(Metric::kAcc);
    report.f1_degenerate_classes = f1_detail(table).degenerate_classes;
    return report;
}

namespace {

constexpr Metric kAllMetrics[] = {Metric::kAuc, Metric::kF1, Metric::kAcc};

std::string format_real(double v) {
    // nlohmann's serializer emits the shortest round-trip representation.
    return nlohmann::json(v).dump();
}

}  // namespace

std::string report_to_json(const MetricReport& r) {
    using nlohmann::ordered_json;
    ordered_json metrics = ordered_json::object();
    for (const auto m : kAllMetrics) {
        const auto& s = r.get(m);
        metrics[std::string(metric_name(m))] = {{"point", s.point}, {"low", s.low}, {"high", s.high}};
    }
    ordered_json j{
        {"experiment_id", r.experiment_id},
        {"strategy", r.strategy},
        {"expert_subset", r.expert_subset},
        {"task", r.task},
        {"split", "test"},
        {"config_hash", r.config_hash},
        {"test_split_hash", r.test_split_hash},
        {"n_test", r.n_test},
        {"metrics", metrics},
        {"f1_degenerate_classes", r.f1_degenerate_classes},
        {"n_boot", r.n_boot},
        {"alpha", r.alpha},
        {"seed", r.seed},
        {"train_seed", r.train_seed},
        {"split_seed", r.split_seed},
        {"skipped_resamples", r.skipped_resamples},
    };
    return j.dump(2) + "\n";
}

MetricReport report_from_json(std::string_view text) {
    using nlohmann::json;
    MetricReport r;
    try {
        const auto j = json::parse(text);
        r.experiment_id = j.at("experiment_id").get<std::string>();
        r.strategy = j.at("strategy").get<std::string>();
        r.expert_subset = j.at("expert_subset").get<std::vector<std::string>>();
        r.task = j.at("task").get<std::string>();
        r.config_hash = j.value("config_hash", "");
        r.test_split_hash = j.value("test_split_hash", "");
        r.n_test = j.value("n_test", std::size_t{0});
        r.n_boot = j.at("n_boot").get<std::size_t>();
        r.alpha = j.value("alpha", 0.05);
        r.seed = j.at("seed").get<std::uint64_t>();
        r.train_seed = j.value("train_seed", std::uint64_t{0});
        r.split_seed = j.value("split_seed", std::uint64_t{0});
        r.f1_degenerate_classes = j.value("f1_degenerate_classes", std::vector<int>{});
        const auto& metrics = j.at("metrics");
        for (const auto m : kAllMetrics) {
            const auto& node = metrics.at(std::string(metric_name(m)));
            MetricSummary s{node.at("point").get<double>(), node.at("low").get<double>(),
                            node.at("high").get<double>()};
            switch (m) {
                case Metric::kAuc: r.auc = s; break;
                case Metric::kF1: r.f1 = s; break;
                case Metric::kAcc: r.acc = s; break;
            }
        }
        r.skipped_resamples = j.value("skipped_resamples", std::size_t{0});
    } catch (const json::exception& e) {
        throw Error(ErrorCode::kDataFormat, std::string("malformed report: ") + e.what());
    }
    return r;
}

std::string report_to_csv(const MetricReport& r) {
    std::ostringstream out;
    out << "experiment_id,config_hash,task,strategy,experts,metric,point,low,high,n_boot,seed\n";
    std::string experts;
    for (std::size_t i = 0; i < r.expert_subset.size(); ++i) {
        if (i > 0) experts += '+';
        experts += r.expert_subset[i];
    }
    for (const auto m : kAllMetrics) {
        const auto& s = r.get(m);
        out << r.experiment_id << ',' << r.config_hash << ',' << r.task << ',' << r.strategy << ','
            << experts << ',' << metric_name(m) << ',' << format_real(s.point) << ','
            << format_real(s.low) << ',' << format_real(s.high) << ',' << r.n_boot << ',' << r.seed
            << '\n';
    }
    return out.str();
}

}  // namespace fusionfm
