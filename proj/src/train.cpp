#include "fusionfm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "fusionfm/error.hpp"

namespace fusionfm {

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfigTrain, msg); };
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) fail("base_lr must be positive");
    if (!(llrd_decay > 0.0 && llrd_decay <= 1.0)) fail("llrd_decay must lie in (0, 1]");
    if (!(epsilon_smooth >= 0.0 && epsilon_smooth < 1.0)) fail("epsilon_smooth must lie in [0, 1)");
    if (epochs < 1) fail("epochs must be at least 1");
    if (batch_size < 1) fail("batch_size must be at least 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1 must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2 must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be nonnegative");
}

LossGrad label_smoothed_ce(std::span<const double> probs, int label, double epsilon) {
    if (!(epsilon >= 0.0 && epsilon < 1.0)) {
        throw Error(ErrorCode::kConfigTrain, "label smoothing epsilon must lie in [0, 1)");
    }
    const auto k = probs.size();
    if (k == 0 || label < 0 || static_cast<std::size_t>(label) >= k) {
        throw Error(ErrorCode::kShape, "label outside the probability vector");
    }
    double total = 0.0;
    for (const double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorCode::kShape, "probabilities must be finite and nonnegative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw Error(ErrorCode::kShape, "probabilities do not sum to 1");

    constexpr double kFloor = 1e-12;
    const double off = epsilon / static_cast<double>(k);
    const auto y = static_cast<std::size_t>(label);
    LossGrad out;
    out.dlogits.resize(k);
    double log_sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        log_sum += std::log(std::max(probs[i], kFloor));
        out.dlogits[i] = probs[i] - off;
    }
    out.dlogits[y] -= 1.0 - epsilon;
    out.loss = -(1.0 - epsilon) * std::log(std::max(probs[y], kFloor)) - off * log_sum;
    return out;
}

LossGrad label_smoothed_ce_logits(std::span<const double> logits, int label, double epsilon) {
    return label_smoothed_ce(softmax(logits), label, epsilon);
}

std::map<int, double> llrd_rates(const FusionModel& model, double base_lr, double decay) {
    if (!(decay > 0.0 && decay <= 1.0)) {
        throw Error(ErrorCode::kConfigTrain, "llrd decay must lie in (0, 1]");
    }
    const int deepest = model.max_depth();
    std::map<int, double> rates;
    for (const auto& p : model.params) {
        rates[p.depth_group] = base_lr * std::pow(decay, deepest - p.depth_group);
    }
    return rates;
}

OptimizerState OptimizerState::zeros_like(std::span<const ParamTensor> params) {
    OptimizerState state;
    for (const auto& p : params) {
        state.m.emplace_back(p.size(), 0.0);
        state.v.emplace_back(p.size(), 0.0);
    }
    return state;
}

void adamw_step(std::span<ParamTensor> params, const std::vector<Vec>& grads, OptimizerState& state,
                std::span<const double> lr_per_tensor, const TrainConfig& config) {
    if (grads.size() != params.size() || lr_per_tensor.size() != params.size() ||
        state.m.size() != params.size() || state.v.size() != params.size()) {
        throw Error(ErrorCode::kShape, "adamw_step: parameter, gradient and state lists differ in length");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].size() || state.m[i].size() != params[i].size() ||
            state.v[i].size() != params[i].size()) {
            throw Error(ErrorCode::kShape, "adamw_step: shape mismatch for '" + params[i].name + "'");
        }
        if (!all_finite(grads[i])) {
            throw Error(ErrorCode::kNonFinite, "adamw_step: gradient of '" + params[i].name + "' is not finite");
        }
    }
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double correction1 = 1.0 - std::pow(b1, t);
    const double correction2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = params[i].values;
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        const double lr = lr_per_tensor[i];
        const double decay = params[i].is_bias() ? 0.0 : config.weight_decay;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            theta[j] -= lr * (m_hat / (std::sqrt(v_hat) + config.adam_eps) + decay * theta[j]);
        }
    }
}

void adamw_step(std::span<ParamTensor> params, const std::vector<Vec>& grads, OptimizerState& state,
                double lr, const TrainConfig& config) {
    const std::vector<double> rates(params.size(), lr);
    adamw_step(params, grads, state, rates, config);
}

PredictionTable predict(const FusionModel& model, const AlignedDataset& dataset, Split split) {
    PredictionTable table;
    table.num_classes = model.config.num_classes;
    for (const auto i : dataset.indices_of(split)) {
        const auto& s = dataset.samples[i];
        const auto probs = softmax(model_forward(model, s.features).logits);
        table.sample_ids.push_back(s.sample_id);
        table.scores.insert(table.scores.end(), probs.begin(), probs.end());
        table.labels.push_back(s.label);
    }
    return table;
}

TrainResult train(FusionModel model, const AlignedDataset& dataset, const TrainConfig& config,
                  const MetricFn& val_metric, const EpochCallback& on_epoch) {
    config.validate();
    model.validate();
    if (model.expert_dims != dataset.dims) {
        throw Error(ErrorCode::kShape, "model expert dims do not match the dataset");
    }
    if (model.config.num_classes != dataset.num_classes) {
        throw Error(ErrorCode::kShape, "model class count does not match the dataset");
    }
    const auto train_idx = dataset.indices_of(Split::kTrain);
    if (train_idx.empty()) throw Error(ErrorCode::kSplitMissing, "training split is empty");
    if (dataset.indices_of(Split::kVal).empty()) throw Error(ErrorCode::kSplitMissing, "validation split is empty");

    const auto classes = static_cast<std::size_t>(dataset.num_classes);
    Vec class_weight(classes, 1.0);
    if (config.class_balanced) {
        std::vector<std::size_t> counts(classes, 0);
        for (const auto i : train_idx) ++counts[static_cast<std::size_t>(dataset.samples[i].label)];
        for (std::size_t c = 0; c < classes; ++c) {
            class_weight[c] = counts[c] == 0 ? 0.0
                                             : static_cast<double>(train_idx.size()) /
                                                   (static_cast<double>(classes) * static_cast<double>(counts[c]));
        }
    }
    const LossFn loss = [&](std::span<const double> logits, int label) {
        auto lg = label_smoothed_ce_logits(logits, label, config.epsilon_smooth);
        const double w = class_weight[static_cast<std::size_t>(label)];
        if (w != 1.0) {
            lg.loss *= w;
            for (auto& d : lg.dlogits) d *= w;
        }
        return lg;
    };

    const auto rates = llrd_rates(model, config.base_lr, config.llrd_decay);
    std::vector<double> lr_per_tensor;
    for (const auto& p : model.params) lr_per_tensor.push_back(rates.at(p.depth_group));
    auto state = OptimizerState::zeros_like(model.params);

    TrainResult result;
    bool have_best = false;
    std::vector<SampleRef> batch;
    batch.reserve(config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        auto order = train_idx;
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const auto stop = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t j = start; j < stop; ++j) {
                const auto& s = dataset.samples[order[j]];
                batch.push_back(SampleRef{s.features, s.label});
            }
            Gradients grads;
            try {
                grads = model_backward(model, batch, loss);
            } catch (const Error& e) {
                throw Error(e.code(), "epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(batches) + ": " + e.what());
            }
            if (!std::isfinite(grads.mean_loss)) {
                throw Error(ErrorCode::kNonFinite, "non-finite loss at epoch " + std::to_string(epoch) +
                                                       ", batch " + std::to_string(batches));
            }
            adamw_step(model.params, grads.tensors, state, lr_per_tensor, config);
            loss_sum += grads.mean_loss;
            ++batches;
        }

        EpochRecord record;
        record.epoch = epoch;
        record.mean_train_loss = loss_sum / static_cast<double>(batches);
        record.val_auc = val_metric(predict(model, dataset, Split::kVal));
        record.lr_by_group = rates;
        record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        if (!have_best || record.val_auc > result.best.val_auc) {
            result.best = Checkpoint{model, epoch, record.val_auc, config};
            have_best = true;
        }
        result.history.push_back(record);
        if (on_epoch) on_epoch(record);
    }
    return result;
}

std::string epoch_record_json(const EpochRecord& record) {
    nlohmann::ordered_json lr = nlohmann::ordered_json::object();
    for (const auto& [group, rate] : record.lr_by_group) lr[std::to_string(group)] = rate;
    nlohmann::ordered_json j{{"epoch", record.epoch},
                             {"mean_train_loss", record.mean_train_loss},
                             {"val_auc", record.val_auc},
                             {"lr_by_group", lr},
                             {"wall_ms", record.wall_ms}};
    return j.dump();
}

}  // namespace fusionfm
