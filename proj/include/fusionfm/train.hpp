#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fusionfm/embedstore.hpp"
#include "fusionfm/fusion.hpp"
#include "fusionfm/metrics.hpp"

namespace fusionfm {

struct TrainConfig {
    double base_lr = 1e-4;
    double llrd_decay = 0.75;
    double epsilon_smooth = 0.1;
    int epochs = 100;
    std::size_t batch_size = 16;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.05;
    // Opt-in inverse-frequency class weights on the loss.
    bool class_balanced = false;
    std::uint64_t seed = 0;

    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

/// Label-smoothed cross-entropy on a probability vector:
///   L = -(1-ε)·log p_y - (ε/K)·Σ_i log p_i
/// Returns the loss and its gradient w.r.t. the pre-softmax logits, p - q,
/// with q_y = 1-ε+ε/K and q_i = ε/K otherwise. Probabilities are clamped at
/// 1e-12 before the log.
LossGrad label_smoothed_ce(std::span<const double> probs, int label, double epsilon);
LossGrad label_smoothed_ce_logits(std::span<const double> logits, int label, double epsilon);

/// lr(d) = base_lr · decay^(D - d), where D is the deepest group.
std::map<int, double> llrd_rates(const FusionModel& model, double base_lr, double decay);

struct OptimizerState {
    std::vector<Vec> m;
    std::vector<Vec> v;
    std::int64_t t = 0;

    static OptimizerState zeros_like(std::span<const ParamTensor> params);
};

/// One AdamW update with decoupled weight decay. Biases are not decayed.
/// `lr_per_tensor` holds one learning rate per tensor.
void adamw_step(std::span<ParamTensor> params, const std::vector<Vec>& grads, OptimizerState& state,
                std::span<const double> lr_per_tensor, const TrainConfig& config);
void adamw_step(std::span<ParamTensor> params, const std::vector<Vec>& grads, OptimizerState& state,
                double lr, const TrainConfig& config);

struct Checkpoint {
    FusionModel model;
    int epoch = 0;
    double val_auc = 0.0;
    TrainConfig train_config;
};

struct EpochRecord {
    int epoch = 0;
    double mean_train_loss = 0.0;
    double val_auc = 0.0;
    std::map<int, double> lr_by_group;
    double wall_ms = 0.0;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch AdamW with layer-wise LR decay. After every epoch the model is
/// scored on the validation split and the best-scoring snapshot is kept.
/// Deterministic in (config.seed, dataset, initial model).
TrainResult train(FusionModel model, const AlignedDataset& dataset, const TrainConfig& config,
                  const MetricFn& val_metric = macro_auc_ovr, const EpochCallback& on_epoch = {});

/// Softmax class probabilities for every sample of one split.
PredictionTable predict(const FusionModel& model, const AlignedDataset& dataset, Split split);

std::string epoch_record_json(const EpochRecord& record);

}  // namespace fusionfm
