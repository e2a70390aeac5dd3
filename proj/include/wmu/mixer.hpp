#pragma once

#include "wmu/random.hpp"
#include "wmu/tensor.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace wmu {

/// Convex weights of the three networks' predictions.
struct MixWeights {
    double alpha = 1.0 / 3.0;
    double beta = 1.0 / 3.0;
    double gamma = 1.0 / 3.0;

    std::array<double, 3> as_array() const { return {alpha, beta, gamma}; }
    /// Non-negative and summing to one within `tol`.
    bool on_simplex(double tol = 1e-9) const;
};

/// One uniform draw from the 2-simplex (Dirichlet(1, 1, 1) via normalized
/// unit exponentials).
MixWeights sample_mix_weights(Rng& rng);

/// Hard per-pixel target: one class per pixel of an (N, K, H, W) field.
class PseudoLabel {
public:
    PseudoLabel(std::int64_t n, std::int64_t k, std::int64_t h, std::int64_t w, std::vector<std::uint8_t> classes);

    std::int64_t batch() const { return n_; }
    std::int64_t num_classes() const { return k_; }
    std::int64_t height() const { return h_; }
    std::int64_t width() const { return w_; }
    Shape shape() const { return {n_, k_, h_, w_}; }
    /// Class per (n, y, x), row-major.
    const std::vector<std::uint8_t>& classes() const { return classes_; }

    template <typename T>
    Tensor<T> one_hot() const;

    bool operator==(const PseudoLabel&) const = default;

private:
    std::int64_t n_, k_, h_, w_;
    std::vector<std::uint8_t> classes_;
};

/// Per-pixel argmax over channels of (N, K, H, W) scores; ties go to the lowest class.
template <typename T>
PseudoLabel argmax_label(const Tensor<T>& scores);

/// alpha * p_cnn + beta * p_vit + gamma * p_mamba.
template <typename T>
Tensor<T> mix_probabilities(const Tensor<T>& p_cnn, const Tensor<T>& p_vit, const Tensor<T>& p_mamba,
                            const MixWeights& w);

/// One-hot argmax of the weighted mixture. A constant target: no gradient path.
template <typename T>
PseudoLabel mix_pseudo(const Tensor<T>& p_cnn, const Tensor<T>& p_vit, const Tensor<T>& p_mamba,
                       const MixWeights& w);

} // namespace wmu
