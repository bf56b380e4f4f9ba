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

enum class Strategy { kSingle, kGating, kTopkRouter };

std::string_view strategy_name(Strategy strategy) noexcept;
std::optional<Strategy> parse_strategy(std::string_view name) noexcept;

struct FusionConfig {
    Strategy strategy = Strategy::kSingle;
    std::vector<std::string> expert_subset;
    std::size_t d_fuse = 16;
    std::size_t top_k = 1;        // router only
    std::size_t gate_hidden = 0;  // 0 = single affine gate, otherwise tanh hidden layer
    int num_classes = 2;
    // Opt-in auxiliary loss pulling mean gate weights toward uniform.
    double load_balance_coef = 0.0;

    std::size_t num_experts() const noexcept { return expert_subset.size(); }
    // Throws kConfigStrategy / kConfigK / kConfig.
    void validate() const;

    bool operator==(const FusionConfig&) const = default;
};

/// Trainable parameters of a fusion head. Tensor layout:
///   proj.{i}.weight (d_fuse × d_i), proj.{i}.bias      depth 0
///   gate.weight / gate.bias, or gate.hidden.* and gate.out.*   depth 1
///   head.weight (classes × d_fuse), head.bias          depth 2 (1 for single)
struct FusionModel {
    FusionConfig config;
    std::vector<std::size_t> expert_dims;
    std::vector<ParamTensor> params;

    bool has_gate() const noexcept { return config.strategy != Strategy::kSingle; }

    ParamTensor& proj_weight(std::size_t i) { return params[2 * i]; }
    ParamTensor& proj_bias(std::size_t i) { return params[2 * i + 1]; }
    const ParamTensor& proj_weight(std::size_t i) const { return params[2 * i]; }
    const ParamTensor& proj_bias(std::size_t i) const { return params[2 * i + 1]; }
    // Gate tensors follow the projections; the head is always last.
    std::size_t gate_offset() const noexcept { return 2 * expert_dims.size(); }
    ParamTensor& head_weight() { return params[params.size() - 2]; }
    ParamTensor& head_bias() { return params[params.size() - 1]; }
    const ParamTensor& head_weight() const { return params[params.size() - 2]; }
    const ParamTensor& head_bias() const { return params[params.size() - 1]; }

    int max_depth() const noexcept;
    std::size_t parameter_count() const noexcept;

    // Config, dims and every tensor's shape/finiteness.
    void validate() const;

    bool operator==(const FusionModel&) const = default;
};

/// Glorot-uniform weights, zero biases, drawn in tensor order from one
/// seeded stream.
FusionModel init_model(const FusionConfig& config, std::span<const std::size_t> expert_dims,
                       std::uint64_t seed);

std::vector<Vec> project(std::span<const Vec> features, const FusionModel& model);
Vec gate_logits(std::span<const Vec> projected, const FusionModel& model);
Vec gate_forward(std::span<const Vec> projected, const FusionModel& model);

/// Keeps the K largest logits (lower index wins ties) and renormalizes them
/// with a softmax; every other weight is exactly zero.
Vec topk_route(std::span<const double> logits, std::size_t k);
std::vector<std::size_t> topk_indices(std::span<const double> logits, std::size_t k);

Vec gating_fuse(std::span<const Vec> projected, std::span<const double> weights);

struct ForwardResult {
    Vec logits;
    std::optional<Vec> gate_weights;
};

ForwardResult model_forward(const FusionModel& model, std::span<const Vec> features);

struct SampleRef {
    std::span<const Vec> features;
    int label = 0;
};

struct LossGrad {
    double loss = 0.0;
    Vec dlogits;
};

// Maps class logits and a label to the loss and its gradient w.r.t. logits.
using LossFn = std::function<LossGrad(std::span<const double> logits, int label)>;

struct Gradients {
    std::vector<Vec> tensors;  // congruent with FusionModel::params
    double mean_loss = 0.0;    // includes the auxiliary term when enabled
};

/// Closed-form mean-over-batch gradients. For the Top-K router the selected
/// set is held fixed; only the selected logits receive gradient.
Gradients model_backward(const FusionModel& model, std::span<const SampleRef> batch,
                         const LossFn& loss);

/// Mean loss of the batch, evaluated by forward passes only.
double batch_loss(const FusionModel& model, std::span<const SampleRef> batch, const LossFn& loss);

// Flat views used by gradient checks and the optimizer.
Vec flatten_params(const FusionModel& model);
void unflatten_params(FusionModel& model, std::span<const double> flat);
Vec flatten(const std::vector<Vec>& tensors);

}  // namespace fusionfm
