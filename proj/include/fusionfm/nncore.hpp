#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fusionfm {

using Vec = std::vector<double>;

/// A named trainable tensor. Values are stored row-major; `depth_group`
/// orders tensors from input (0) to output for layer-wise LR decay.
struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    Vec values;
    int depth_group = 0;

    std::size_t size() const noexcept { return values.size(); }
    std::size_t rows() const noexcept { return shape.empty() ? 0 : shape.front(); }
    std::size_t cols() const noexcept { return shape.size() < 2 ? 1 : shape[1]; }
    // Rank-1 tensors are biases; they are exempt from weight decay.
    bool is_bias() const noexcept { return shape.size() == 1; }

    // Throws kShape / kNonFinite when the invariants do not hold.
    void validate() const;

    bool operator==(const ParamTensor&) const = default;
};

std::size_t shape_product(std::span<const std::size_t> shape) noexcept;

// y = W·x + b with W given row-major as rows × x.size().
Vec affine(std::span<const double> x, std::span<const double> weight, std::size_t rows,
           std::span<const double> bias);
Vec affine(std::span<const double> x, const ParamTensor& weight, const ParamTensor& bias);

// y = Wᵀ·v, the adjoint of the linear part of affine().
Vec affine_transpose(std::span<const double> v, std::span<const double> weight, std::size_t rows,
                     std::size_t cols);

// Accumulates scale · outer(u, x) into a row-major rows × cols buffer.
void add_outer(std::span<double> target, std::span<const double> u, std::span<const double> x,
               double scale = 1.0);

/// Max-subtracted softmax. Throws kNonFinite on any non-finite logit.
Vec softmax(std::span<const double> logits);

bool all_finite(std::span<const double> values) noexcept;
bool all_finite(std::span<const float> values) noexcept;

/// Central-difference gradient of a scalar function. The parameter vector is
/// perturbed one coordinate at a time, so `f` sees a fresh copy on each call.
Vec finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                     std::span<const double> params, double eps);

/// SplitMix64 generator. The algorithm is fixed: the stream for a given seed
/// never changes, which keeps every seeded artifact in this repo reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept;
    // Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double low, double high) noexcept;
    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept;
    // Standard normal via Box-Muller; consumes two uniforms per call.
    double normal() noexcept;

    template <typename T>
    void shuffle(std::vector<T>& items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
};

inline Rng seeded_rng(std::uint64_t seed) noexcept { return Rng(seed); }

// Child seed for an independent sub-stream, e.g. one per epoch or per
// bootstrap iteration.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

}  // namespace fusionfm
