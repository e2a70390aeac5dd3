#include "wmu/losses.hpp"

#include "wmu/labels.hpp"
#include "wmu/ops.hpp"

#include <cmath>

namespace wmu {

template <typename T>
Var<T> pce_loss(const Var<T>& probs, std::span<const std::uint8_t> scrib, LossNorm norm)
{
    const auto& s = probs.shape();
    if (s.size() != 4 || static_cast<std::int64_t>(scrib.size()) != s[0] * s[2] * s[3]) {
        throw ConfigError("pce_loss: " + std::to_string(scrib.size()) + " labels for probabilities " +
                          shape_str(s));
    }
    const std::int64_t n = s[0], k = s[1], hw = s[2] * s[3];
    const T* p = probs.value().data();
    std::int64_t labeled = 0;
    T total = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t px = 0; px < hw; ++px) {
            const auto c = scrib[static_cast<std::size_t>(i * hw + px)];
            if (c == kUnlabeled) {
                continue;
            }
            if (c >= k) {
                throw DataError("scribble class " + std::to_string(c) + " >= K = " + std::to_string(k));
            }
            total -= std::log(std::max(p[(i * k + c) * hw + px], T(kLogClamp)));
            ++labeled;
        }
    }
    const T factor = (norm == LossNorm::Mean && labeled > 0) ? T(1) / T(labeled) : T(1);
    Tensor<T> out({1}, std::vector<T>{total * factor});
    std::vector<std::uint8_t> labels(scrib.begin(), scrib.end());
    return make_result<T>(std::move(out), {probs}, [n, k, hw, factor, labels = std::move(labels)](Node<T>& self) {
        auto& g = *self.input_grad(0);
        const T* p = self.input_value(0).data();
        const T up = self.grad[0] * factor;
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t px = 0; px < hw; ++px) {
                const auto c = labels[static_cast<std::size_t>(i * hw + px)];
                if (c == kUnlabeled) {
                    continue;
                }
                const std::int64_t idx = (i * k + c) * hw + px;
                if (p[idx] > T(kLogClamp)) {
                    g[idx] -= up / p[idx];
                }
            }
        }
    });
}

template <typename T>
Var<T> dice_loss(const Var<T>& probs, const PseudoLabel& pseudo)
{
    if (probs.shape() != pseudo.shape()) {
        throw ConfigError("dice_loss: probabilities " + shape_str(probs.shape()) + " vs pseudo label " +
                          shape_str(pseudo.shape()));
    }
    const std::int64_t n = pseudo.batch(), k = pseudo.num_classes(), hw = pseudo.height() * pseudo.width();
    const T* p = probs.value().data();
    const auto& cls = pseudo.classes();
    const T eps = T(kDiceEps);
    std::vector<T> inter(static_cast<std::size_t>(k)), psum(static_cast<std::size_t>(k)),
        gsum(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t c = 0; c < k; ++c) {
            for (std::int64_t px = 0; px < hw; ++px) {
                const T pv = p[(i * k + c) * hw + px];
                psum[static_cast<std::size_t>(c)] += pv;
                if (cls[static_cast<std::size_t>(i * hw + px)] == c) {
                    inter[static_cast<std::size_t>(c)] += pv;
                    gsum[static_cast<std::size_t>(c)] += T(1);
                }
            }
        }
    }
    T loss = 0;
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
        loss += T(1) - (T(2) * inter[c] + eps) / (psum[c] + gsum[c] + eps);
    }
    loss /= T(k);
    return make_result<T>(Tensor<T>({1}, std::vector<T>{loss}), {probs},
                          [=, classes = cls](Node<T>& self) {
                              auto& g = *self.input_grad(0);
                              const T up = self.grad[0] / T(k);
                              // d/dp of -(2I + eps)/(P + G + eps), with dI/dp = [class match], dP/dp = 1.
                              std::vector<T> d_match(static_cast<std::size_t>(k)), d_other(static_cast<std::size_t>(k));
                              for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
                                  const T denom = psum[c] + gsum[c] + eps;
                                  const T num = T(2) * inter[c] + eps;
                                  d_other[c] = up * num / (denom * denom);
                                  d_match[c] = d_other[c] - up * T(2) / denom;
                              }
                              for (std::int64_t i = 0; i < n; ++i) {
                                  for (std::int64_t c = 0; c < k; ++c) {
                                      const auto cu = static_cast<std::size_t>(c);
                                      for (std::int64_t px = 0; px < hw; ++px) {
                                          const bool match = classes[static_cast<std::size_t>(i * hw + px)] == c;
                                          g[(i * k + c) * hw + px] += match ? d_match[cu] : d_other[cu];
                                      }
                                  }
                              }
                          });
}

template <typename T>
LossBreakdown TotalLoss<T>::breakdown() const
{
    std::vector<double> p, d;
    for (const auto& v : pce) {
        p.push_back(static_cast<double>(v.value()[0]));
    }
    for (const auto& v : dice) {
        d.push_back(static_cast<double>(v.value()[0]));
    }
    LossBreakdown b{p, d, 0.0};
    for (std::size_t i = 0; i < p.size(); ++i) {
        b.total += p[i] + d[i];
    }
    return b;
}

template <typename T>
TotalLoss<T> total_loss(const std::vector<Var<T>>& probs, std::span<const std::uint8_t> scrib,
                        const PseudoLabel& pseudo, LossNorm norm)
{
    if (probs.empty()) {
        throw ConfigError("total_loss: no predictions");
    }
    TotalLoss<T> out;
    for (const auto& p : probs) {
        out.pce.push_back(pce_loss(p, scrib, norm));
        out.dice.push_back(dice_loss(p, pseudo));
        auto term = add(out.pce.back(), out.dice.back());
        out.total = out.total.defined() ? add(out.total, term) : term;
    }
    return out;
}

template Var<float> pce_loss(const Var<float>&, std::span<const std::uint8_t>, LossNorm);
template Var<double> pce_loss(const Var<double>&, std::span<const std::uint8_t>, LossNorm);
template Var<float> dice_loss(const Var<float>&, const PseudoLabel&);
template Var<double> dice_loss(const Var<double>&, const PseudoLabel&);
template struct TotalLoss<float>;
template struct TotalLoss<double>;
template TotalLoss<float> total_loss(const std::vector<Var<float>>&, std::span<const std::uint8_t>,
                                     const PseudoLabel&, LossNorm);
template TotalLoss<double> total_loss(const std::vector<Var<double>>&, std::span<const std::uint8_t>,
                                      const PseudoLabel&, LossNorm);

} // namespace wmu
