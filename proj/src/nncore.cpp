#include "fusionfm/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fusionfm/error.hpp"

namespace fusionfm {

void ParamTensor::validate() const {
    if (shape.empty()) {
        throw Error(ErrorCode::kShape, "tensor '" + name + "' has empty shape");
    }
    for (const auto extent : shape) {
        if (extent == 0) {
            throw Error(ErrorCode::kShape, "tensor '" + name + "' has a zero extent");
        }
    }
    if (values.size() != shape_product(shape)) {
        throw Error(ErrorCode::kShape, "tensor '" + name + "' value count does not match shape");
    }
    if (depth_group < 0) {
        throw Error(ErrorCode::kShape, "tensor '" + name + "' has negative depth_group");
    }
    if (!all_finite(values)) {
        throw Error(ErrorCode::kNonFinite, "tensor '" + name + "' holds a non-finite value");
    }
}

std::size_t shape_product(std::span<const std::size_t> shape) noexcept {
    std::size_t n = 1;
    for (const auto extent : shape) n *= extent;
    return n;
}

Vec affine(std::span<const double> x, std::span<const double> weight, std::size_t rows,
           std::span<const double> bias) {
    const std::size_t cols = x.size();
    if (weight.size() != rows * cols || bias.size() != rows) {
        throw Error(ErrorCode::kShape, "affine: got x of length " + std::to_string(cols) +
                                           " for a " + std::to_string(rows) + "-row map with " +
                                           std::to_string(weight.size()) + " weights");
    }
    Vec y(bias.begin(), bias.end());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = weight.data() + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] += acc;
    }
    return y;
}

Vec affine(std::span<const double> x, const ParamTensor& weight, const ParamTensor& bias) {
    if (weight.shape.size() != 2 || weight.cols() != x.size()) {
        throw Error(ErrorCode::kShape, "affine: input width does not match '" + weight.name + "'");
    }
    return affine(x, weight.values, weight.rows(), bias.values);
}

Vec affine_transpose(std::span<const double> v, std::span<const double> weight, std::size_t rows,
                     std::size_t cols) {
    if (v.size() != rows || weight.size() != rows * cols) {
        throw Error(ErrorCode::kShape, "affine_transpose: shape mismatch");
    }
    Vec out(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = weight.data() + r * cols;
        const double vr = v[r];
        if (vr == 0.0) continue;
        for (std::size_t c = 0; c < cols; ++c) out[c] += row[c] * vr;
    }
    return out;
}

void add_outer(std::span<double> target, std::span<const double> u, std::span<const double> x,
               double scale) {
    const std::size_t cols = x.size();
    if (target.size() != u.size() * cols) {
        throw Error(ErrorCode::kShape, "add_outer: shape mismatch");
    }
    for (std::size_t r = 0; r < u.size(); ++r) {
        const double ur = scale * u[r];
        if (ur == 0.0) continue;
        double* row = target.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += ur * x[c];
    }
}

Vec softmax(std::span<const double> logits) {
    if (logits.empty()) {
        throw Error(ErrorCode::kShape, "softmax of an empty vector");
    }
    if (!all_finite(logits)) {
        throw Error(ErrorCode::kNonFinite, "softmax input is not finite");
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    Vec out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (auto& p : out) p /= total;
    return out;
}

bool all_finite(std::span<const double> values) noexcept {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

bool all_finite(std::span<const float> values) noexcept {
    return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

Vec finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                     std::span<const double> params, double eps) {
    if (!(eps > 0.0 && eps <= 1e-2)) {
        throw Error(ErrorCode::kConfig, "finite_diff_grad: eps must lie in (0, 1e-2]");
    }
    Vec probe(params.begin(), params.end());
    Vec grad(params.size());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + eps;
        const double up = f(probe);
        probe[i] = saved - eps;
        const double down = f(probe);
        probe[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw Error(ErrorCode::kNonFinite,
                        "finite_diff_grad: f is not finite at coordinate " + std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

std::uint64_t Rng::next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double low, double high) noexcept {
    return low + (high - low) * uniform();
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
    // Rejection sampling keeps the draw unbiased for every n.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

double Rng::normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    Rng mixer(seed ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
    mixer.next_u64();
    return mixer.next_u64();
}

}  // namespace fusionfm
