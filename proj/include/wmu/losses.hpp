#pragma once

#include "wmu/autograd.hpp"
#include "wmu/mixer.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace wmu {

/// How the partial cross-entropy is reduced over the scribbled pixels.
enum class LossNorm { Mean, Sum };

inline constexpr double kLogClamp = 1e-12;
inline constexpr double kDiceEps = 1e-5;

/// Partial cross-entropy over scribbled pixels of (N, K, H, W) probabilities.
/// `scrib` holds N*H*W labels, kUnlabeled where no annotation exists.
/// Returns 0 (and no gradient) when nothing is labeled. Throws DataError for
/// a label >= K that is not kUnlabeled.
template <typename T>
Var<T> pce_loss(const Var<T>& probs, std::span<const std::uint8_t> scrib, LossNorm norm = LossNorm::Mean);

/// Soft dice against a hard target, averaged over all K classes:
/// mean_k 1 - (2 sum p g + eps) / (sum p + sum g + eps), sums over the batch.
template <typename T>
Var<T> dice_loss(const Var<T>& probs, const PseudoLabel& pseudo);

/// Per-network values of one objective evaluation.
struct LossBreakdown {
    std::vector<double> pce;
    std::vector<double> dice;
    double total = 0.0;
};

template <typename T>
struct TotalLoss {
    std::vector<Var<T>> pce;
    std::vector<Var<T>> dice;
    /// Sum over networks of (pce_i + dice_i); each network's graph is disjoint,
    /// so backpropagating this reaches every network only through its own terms.
    Var<T> total;

    LossBreakdown breakdown() const;
};

template <typename T>
TotalLoss<T> total_loss(const std::vector<Var<T>>& probs, std::span<const std::uint8_t> scrib,
                        const PseudoLabel& pseudo, LossNorm norm = LossNorm::Mean);

} // namespace wmu
