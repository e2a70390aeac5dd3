#include "wmu/mixer.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace wmu {

bool MixWeights::on_simplex(double tol) const
{
    return alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0 && std::abs(alpha + beta + gamma - 1.0) <= tol;
}

MixWeights sample_mix_weights(Rng& rng)
{
    std::exponential_distribution<double> e(1.0);
    const double a = e(rng), b = e(rng), c = e(rng);
    const double s = a + b + c;
    MixWeights w;
    w.alpha = a / s;
    w.beta = b / s;
    w.gamma = 1.0 - w.alpha - w.beta;
    if (w.gamma < 0.0) {
        w.gamma = 0.0;
    }
    return w;
}

PseudoLabel::PseudoLabel(std::int64_t n, std::int64_t k, std::int64_t h, std::int64_t w,
                         std::vector<std::uint8_t> classes)
    : n_(n), k_(k), h_(h), w_(w), classes_(std::move(classes))
{
    if (static_cast<std::int64_t>(classes_.size()) != n * h * w) {
        throw ConfigError("pseudo label: class map size does not match (N, H, W)");
    }
    for (auto c : classes_) {
        if (c >= k) {
            throw ConfigError("pseudo label: class " + std::to_string(c) + " out of range");
        }
    }
}

template <typename T>
Tensor<T> PseudoLabel::one_hot() const
{
    Tensor<T> out({n_, k_, h_, w_});
    const std::int64_t hw = h_ * w_;
    for (std::int64_t i = 0; i < n_; ++i) {
        for (std::int64_t p = 0; p < hw; ++p) {
            out[(i * k_ + classes_[static_cast<std::size_t>(i * hw + p)]) * hw + p] = T(1);
        }
    }
    return out;
}

template <typename T>
PseudoLabel argmax_label(const Tensor<T>& scores)
{
    if (scores.rank() != 4) {
        throw ConfigError("argmax_label: scores must be (N, K, H, W), got " + shape_str(scores.shape()));
    }
    const std::int64_t n = scores.dim(0), k = scores.dim(1), h = scores.dim(2), w = scores.dim(3), hw = h * w;
    std::vector<std::uint8_t> classes(static_cast<std::size_t>(n * hw));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t p = 0; p < hw; ++p) {
            std::int64_t best = 0;
            T best_v = scores[i * k * hw + p];
            for (std::int64_t c = 1; c < k; ++c) {
                const T v = scores[(i * k + c) * hw + p];
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            classes[static_cast<std::size_t>(i * hw + p)] = static_cast<std::uint8_t>(best);
        }
    }
    return PseudoLabel(n, k, h, w, std::move(classes));
}

template <typename T>
Tensor<T> mix_probabilities(const Tensor<T>& p_cnn, const Tensor<T>& p_vit, const Tensor<T>& p_mamba,
                            const MixWeights& w)
{
    if (p_cnn.shape() != p_vit.shape() || p_cnn.shape() != p_mamba.shape()) {
        throw ConfigError("mix_pseudo: probability maps differ in shape: " + shape_str(p_cnn.shape()) + ", " +
                          shape_str(p_vit.shape()) + ", " + shape_str(p_mamba.shape()));
    }
    Tensor<T> m(p_cnn.shape());
    for (std::int64_t i = 0; i < m.numel(); ++i) {
        std::array<double, 3> t{w.alpha * p_cnn[i], w.beta * p_vit[i], w.gamma * p_mamba[i]};
        // Summing in sorted order makes the result independent of network order.
        std::sort(t.begin(), t.end());
        m[i] = static_cast<T>(t[0] + t[1] + t[2]);
    }
    return m;
}

template <typename T>
PseudoLabel mix_pseudo(const Tensor<T>& p_cnn, const Tensor<T>& p_vit, const Tensor<T>& p_mamba,
                       const MixWeights& w)
{
    return argmax_label(mix_probabilities(p_cnn, p_vit, p_mamba, w));
}

template Tensor<float> PseudoLabel::one_hot<float>() const;
template Tensor<double> PseudoLabel::one_hot<double>() const;
template PseudoLabel argmax_label(const Tensor<float>&);
template PseudoLabel argmax_label(const Tensor<double>&);
template Tensor<float> mix_probabilities(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                         const MixWeights&);
template Tensor<double> mix_probabilities(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                          const MixWeights&);
template PseudoLabel mix_pseudo(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                const MixWeights&);
template PseudoLabel mix_pseudo(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                const MixWeights&);

} // namespace wmu
