#include "fusionfm/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fusionfm/error.hpp"

namespace fusionfm {

std::string_view strategy_name(Strategy strategy) noexcept {
    switch (strategy) {
        case Strategy::kSingle: return "single";
        case Strategy::kGating: return "gating";
        case Strategy::kTopkRouter: return "topk_router";
    }
    return "single";
}

std::optional<Strategy> parse_strategy(std::string_view name) noexcept {
    if (name == "single") return Strategy::kSingle;
    if (name == "gating") return Strategy::kGating;
    if (name == "topk_router") return Strategy::kTopkRouter;
    return std::nullopt;
}

void FusionConfig::validate() const {
    const auto n = num_experts();
    if (n == 0) throw Error(ErrorCode::kConfig, "expert_subset is empty");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (expert_subset[i] == expert_subset[j]) {
                throw Error(ErrorCode::kConfig, "expert '" + expert_subset[i] + "' listed twice");
            }
        }
    }
    if (strategy == Strategy::kSingle && n != 1) {
        throw Error(ErrorCode::kConfigStrategy,
                    "strategy 'single' needs exactly one expert, got " + std::to_string(n));
    }
    if (strategy == Strategy::kTopkRouter && (top_k < 1 || top_k > n)) {
        throw Error(ErrorCode::kConfigK, "top_k = " + std::to_string(top_k) + " is outside [1, " +
                                             std::to_string(n) + "]");
    }
    if (d_fuse == 0) throw Error(ErrorCode::kConfig, "d_fuse must be positive");
    if (num_classes < 2) throw Error(ErrorCode::kConfig, "num_classes must be at least 2");
    if (!(load_balance_coef >= 0.0) || !std::isfinite(load_balance_coef)) {
        throw Error(ErrorCode::kConfig, "load_balance_coef must be finite and nonnegative");
    }
}

int FusionModel::max_depth() const noexcept {
    int d = 0;
    for (const auto& p : params) d = std::max(d, p.depth_group);
    return d;
}

std::size_t FusionModel::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
}

namespace {

ParamTensor make_tensor(std::string name, std::vector<std::size_t> shape, int depth) {
    ParamTensor t;
    t.name = std::move(name);
    t.values.assign(shape_product(shape), 0.0);
    t.shape = std::move(shape);
    t.depth_group = depth;
    return t;
}

std::vector<ParamTensor> skeleton(const FusionConfig& config, std::span<const std::size_t> dims) {
    const auto n = config.num_experts();
    const auto classes = static_cast<std::size_t>(config.num_classes);
    std::vector<ParamTensor> params;
    for (std::size_t i = 0; i < n; ++i) {
        const auto prefix = "proj." + std::to_string(i);
        params.push_back(make_tensor(prefix + ".weight", {config.d_fuse, dims[i]}, 0));
        params.push_back(make_tensor(prefix + ".bias", {config.d_fuse}, 0));
    }
    int head_depth = 1;
    if (config.strategy != Strategy::kSingle) {
        const auto concat = n * config.d_fuse;
        if (config.gate_hidden == 0) {
            params.push_back(make_tensor("gate.weight", {n, concat}, 1));
            params.push_back(make_tensor("gate.bias", {n}, 1));
        } else {
            params.push_back(make_tensor("gate.hidden.weight", {config.gate_hidden, concat}, 1));
            params.push_back(make_tensor("gate.hidden.bias", {config.gate_hidden}, 1));
            params.push_back(make_tensor("gate.out.weight", {n, config.gate_hidden}, 1));
            params.push_back(make_tensor("gate.out.bias", {n}, 1));
        }
        head_depth = 2;
    }
    params.push_back(make_tensor("head.weight", {classes, config.d_fuse}, head_depth));
    params.push_back(make_tensor("head.bias", {classes}, head_depth));
    return params;
}

void check_features(std::span<const Vec> features, const FusionModel& model) {
    if (features.size() != model.expert_dims.size()) {
        throw Error(ErrorCode::kShape, "expected " + std::to_string(model.expert_dims.size()) +
                                           " expert vectors, got " + std::to_string(features.size()));
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != model.expert_dims[i]) {
            throw Error(ErrorCode::kShape, "expert " + std::to_string(i) + " vector has width " +
                                               std::to_string(features[i].size()) + ", expected " +
                                               std::to_string(model.expert_dims[i]));
        }
    }
}

Vec concat(std::span<const Vec> parts) {
    Vec out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

// Intermediates of one forward pass, kept for the backward pass.
struct Trace {
    std::vector<Vec> projected;
    Vec gate_input;
    Vec hidden;  // tanh activations, empty for a linear gate
    Vec gate_logits;
    Vec weights;
    std::vector<std::size_t> active;  // experts that received weight through the softmax
    Vec fused;
    Vec logits;
};

Trace trace_forward(const FusionModel& model, std::span<const Vec> features) {
    check_features(features, model);
    Trace t;
    t.projected = project(features, model);
    const auto n = model.expert_dims.size();
    if (!model.has_gate()) {
        t.fused = t.projected.front();
    } else {
        t.gate_input = concat(t.projected);
        const auto g = model.gate_offset();
        if (model.config.gate_hidden == 0) {
            t.gate_logits = affine(t.gate_input, model.params[g], model.params[g + 1]);
        } else {
            t.hidden = affine(t.gate_input, model.params[g], model.params[g + 1]);
            for (auto& h : t.hidden) h = std::tanh(h);
            t.gate_logits = affine(t.hidden, model.params[g + 2], model.params[g + 3]);
        }
        if (model.config.strategy == Strategy::kTopkRouter) {
            t.active = topk_indices(t.gate_logits, model.config.top_k);
            std::sort(t.active.begin(), t.active.end());
            t.weights = topk_route(t.gate_logits, model.config.top_k);
        } else {
            t.active.resize(n);
            std::iota(t.active.begin(), t.active.end(), std::size_t{0});
            t.weights = softmax(t.gate_logits);
        }
        t.fused = gating_fuse(t.projected, t.weights);
    }
    t.logits = affine(t.fused, model.head_weight(), model.head_bias());
    return t;
}

}  // namespace

void FusionModel::validate() const {
    config.validate();
    if (expert_dims.size() != config.num_experts()) {
        throw Error(ErrorCode::kShape, "expert_dims length does not match expert_subset");
    }
    const auto expected = skeleton(config, expert_dims);
    if (expected.size() != params.size()) {
        throw Error(ErrorCode::kShape, "parameter list does not match the configuration");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i].validate();
        if (params[i].name != expected[i].name || params[i].shape != expected[i].shape ||
            params[i].depth_group != expected[i].depth_group) {
            throw Error(ErrorCode::kShape, "tensor '" + params[i].name + "' does not match the configuration");
        }
    }
}

FusionModel init_model(const FusionConfig& config, std::span<const std::size_t> expert_dims,
                       std::uint64_t seed) {
    config.validate();
    if (expert_dims.size() != config.num_experts()) {
        throw Error(ErrorCode::kShape, "expert_dims length does not match expert_subset");
    }
    for (const auto d : expert_dims) {
        if (d == 0) throw Error(ErrorCode::kShape, "expert dimension must be positive");
    }
    FusionModel model;
    model.config = config;
    model.expert_dims.assign(expert_dims.begin(), expert_dims.end());
    model.params = skeleton(config, expert_dims);
    Rng rng(seed);
    for (auto& t : model.params) {
        if (t.is_bias()) continue;
        const double fan_out = static_cast<double>(t.rows());
        const double fan_in = static_cast<double>(t.cols());
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : t.values) v = rng.uniform(-bound, bound);
    }
    return model;
}

std::vector<Vec> project(std::span<const Vec> features, const FusionModel& model) {
    check_features(features, model);
    std::vector<Vec> out;
    out.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        out.push_back(affine(features[i], model.proj_weight(i), model.proj_bias(i)));
    }
    return out;
}

Vec gate_logits(std::span<const Vec> projected, const FusionModel& model) {
    if (!model.has_gate()) {
        throw Error(ErrorCode::kConfigStrategy, "strategy 'single' has no gate");
    }
    if (projected.size() != model.expert_dims.size()) {
        throw Error(ErrorCode::kShape, "gate expects one projected vector per expert");
    }
    for (const auto& z : projected) {
        if (z.size() != model.config.d_fuse) throw Error(ErrorCode::kShape, "projected width != d_fuse");
    }
    const auto input = concat(projected);
    const auto g = model.gate_offset();
    if (model.config.gate_hidden == 0) return affine(input, model.params[g], model.params[g + 1]);
    auto hidden = affine(input, model.params[g], model.params[g + 1]);
    for (auto& h : hidden) h = std::tanh(h);
    return affine(hidden, model.params[g + 2], model.params[g + 3]);
}

Vec gate_forward(std::span<const Vec> projected, const FusionModel& model) {
    return softmax(gate_logits(projected, model));
}

std::vector<std::size_t> topk_indices(std::span<const double> logits, std::size_t k) {
    if (k < 1 || k > logits.size()) {
        throw Error(ErrorCode::kConfigK, "top_k = " + std::to_string(k) + " is outside [1, " +
                                             std::to_string(logits.size()) + "]");
    }
    if (!all_finite(logits)) throw Error(ErrorCode::kNonFinite, "router logits are not finite");
    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    order.resize(k);
    return order;
}

Vec topk_route(std::span<const double> logits, std::size_t k) {
    auto chosen = topk_indices(logits, k);
    std::sort(chosen.begin(), chosen.end());
    Vec selected;
    selected.reserve(k);
    for (const auto i : chosen) selected.push_back(logits[i]);
    const auto probs = softmax(selected);
    Vec weights(logits.size(), 0.0);
    for (std::size_t j = 0; j < chosen.size(); ++j) weights[chosen[j]] = probs[j];
    return weights;
}

Vec gating_fuse(std::span<const Vec> projected, std::span<const double> weights) {
    if (projected.empty() || projected.size() != weights.size()) {
        throw Error(ErrorCode::kShape, "gating_fuse needs one weight per expert");
    }
    double total = 0.0;
    for (const double w : weights) {
        if (!(w >= 0.0)) throw Error(ErrorCode::kConfig, "gate weights must be nonnegative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw Error(ErrorCode::kConfig, "gate weights sum to " + std::to_string(total) + ", not 1");
    }
    const auto width = projected.front().size();
    Vec fused(width, 0.0);
    for (std::size_t i = 0; i < projected.size(); ++i) {
        if (projected[i].size() != width) throw Error(ErrorCode::kShape, "projected widths differ");
        if (weights[i] == 0.0) continue;
        for (std::size_t c = 0; c < width; ++c) fused[c] += weights[i] * projected[i][c];
    }
    return fused;
}

ForwardResult model_forward(const FusionModel& model, std::span<const Vec> features) {
    auto t = trace_forward(model, features);
    ForwardResult out{std::move(t.logits), std::nullopt};
    if (model.has_gate()) out.gate_weights = std::move(t.weights);
    return out;
}

double batch_loss(const FusionModel& model, std::span<const SampleRef> batch, const LossFn& loss) {
    if (batch.empty()) throw Error(ErrorCode::kConfig, "batch is empty");
    const auto n = model.expert_dims.size();
    double total = 0.0;
    Vec mean_weights(n, 0.0);
    for (const auto& s : batch) {
        const auto t = trace_forward(model, s.features);
        total += loss(t.logits, s.label).loss;
        for (std::size_t i = 0; i < t.weights.size(); ++i) mean_weights[i] += t.weights[i];
    }
    const double b = static_cast<double>(batch.size());
    double result = total / b;
    if (model.has_gate() && model.config.load_balance_coef > 0.0) {
        double sq = 0.0;
        for (const double w : mean_weights) sq += (w / b) * (w / b);
        result += model.config.load_balance_coef * static_cast<double>(n) * sq;
    }
    return result;
}

Gradients model_backward(const FusionModel& model, std::span<const SampleRef> batch,
                         const LossFn& loss) {
    if (batch.empty()) throw Error(ErrorCode::kConfig, "batch is empty");
    const auto& cfg = model.config;
    const auto n = model.expert_dims.size();
    const auto width = cfg.d_fuse;
    const auto classes = static_cast<std::size_t>(cfg.num_classes);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    Gradients grads;
    grads.tensors.reserve(model.params.size());
    for (const auto& p : model.params) grads.tensors.emplace_back(p.size(), 0.0);

    std::vector<Trace> traces;
    traces.reserve(batch.size());
    for (const auto& s : batch) traces.push_back(trace_forward(model, s.features));

    const bool balance = model.has_gate() && cfg.load_balance_coef > 0.0;
    Vec mean_weights(n, 0.0);
    if (balance) {
        for (const auto& t : traces) {
            for (std::size_t i = 0; i < n; ++i) mean_weights[i] += t.weights[i] * inv_b;
        }
    }

    const auto head_w = model.params.size() - 2;
    const auto g = model.gate_offset();
    double total_loss = 0.0;
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const auto& t = traces[bi];
        const auto lg = loss(t.logits, batch[bi].label);
        if (lg.dlogits.size() != classes) throw Error(ErrorCode::kShape, "loss gradient has wrong width");
        total_loss += lg.loss;
        Vec delta(lg.dlogits);
        for (auto& d : delta) d *= inv_b;

        add_outer(grads.tensors[head_w], delta, t.fused);
        for (std::size_t k = 0; k < classes; ++k) grads.tensors[head_w + 1][k] += delta[k];
        const Vec dfused = affine_transpose(delta, model.head_weight().values, classes, width);

        std::vector<Vec> dz(n, Vec(width, 0.0));
        if (!model.has_gate()) {
            dz[0] = dfused;
        } else {
            Vec dweights(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t c = 0; c < width; ++c) dot += dfused[c] * t.projected[i][c];
                dweights[i] = dot;
                if (balance) {
                    dweights[i] += cfg.load_balance_coef * static_cast<double>(n) * 2.0 * mean_weights[i] * inv_b;
                }
                for (std::size_t c = 0; c < width; ++c) dz[i][c] = t.weights[i] * dfused[c];
            }
            // Softmax backward over the active experts only.
            double weighted = 0.0;
            for (const auto i : t.active) weighted += t.weights[i] * dweights[i];
            Vec dlogits(n, 0.0);
            for (const auto i : t.active) dlogits[i] = t.weights[i] * (dweights[i] - weighted);

            Vec dinput;
            const auto concat_width = n * width;
            if (cfg.gate_hidden == 0) {
                add_outer(grads.tensors[g], dlogits, t.gate_input);
                for (std::size_t i = 0; i < n; ++i) grads.tensors[g + 1][i] += dlogits[i];
                dinput = affine_transpose(dlogits, model.params[g].values, n, concat_width);
            } else {
                const auto hidden = cfg.gate_hidden;
                add_outer(grads.tensors[g + 2], dlogits, t.hidden);
                for (std::size_t i = 0; i < n; ++i) grads.tensors[g + 3][i] += dlogits[i];
                Vec dpre = affine_transpose(dlogits, model.params[g + 2].values, n, hidden);
                for (std::size_t h = 0; h < hidden; ++h) dpre[h] *= 1.0 - t.hidden[h] * t.hidden[h];
                add_outer(grads.tensors[g], dpre, t.gate_input);
                for (std::size_t h = 0; h < hidden; ++h) grads.tensors[g + 1][h] += dpre[h];
                dinput = affine_transpose(dpre, model.params[g].values, hidden, concat_width);
            }
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t c = 0; c < width; ++c) dz[i][c] += dinput[i * width + c];
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            add_outer(grads.tensors[2 * i], dz[i], batch[bi].features[i]);
            for (std::size_t c = 0; c < width; ++c) grads.tensors[2 * i + 1][c] += dz[i][c];
        }
    }

    grads.mean_loss = total_loss * inv_b;
    if (balance) {
        double sq = 0.0;
        for (const double w : mean_weights) sq += w * w;
        grads.mean_loss += cfg.load_balance_coef * static_cast<double>(n) * sq;
    }
    for (std::size_t i = 0; i < grads.tensors.size(); ++i) {
        if (!all_finite(grads.tensors[i])) {
            throw Error(ErrorCode::kNonFinite, "gradient of '" + model.params[i].name + "' is not finite");
        }
    }
    return grads;
}

Vec flatten_params(const FusionModel& model) {
    Vec flat;
    flat.reserve(model.parameter_count());
    for (const auto& p : model.params) flat.insert(flat.end(), p.values.begin(), p.values.end());
    return flat;
}

void unflatten_params(FusionModel& model, std::span<const double> flat) {
    if (flat.size() != model.parameter_count()) {
        throw Error(ErrorCode::kShape, "flat parameter vector has the wrong length");
    }
    std::size_t pos = 0;
    for (auto& p : model.params) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), p.size(), p.values.begin());
        pos += p.size();
    }
}

Vec flatten(const std::vector<Vec>& tensors) {
    Vec flat;
    for (const auto& t : tensors) flat.insert(flat.end(), t.begin(), t.end());
    return flat;
}

}  // namespace fusionfm
