#include "wmu/ssm.hpp"

#include <cmath>

namespace wmu {

template <typename T>
Var<T> selective_scan(const Var<T>& x, const Var<T>& delta, const Var<T>& a, const Var<T>& b, const Var<T>& c,
                      const Var<T>& d_skip)
{
    const auto& xs = x.shape();
    if (xs.size() != 2 && xs.size() != 3) {
        throw ConfigError("selective_scan: x must be (L, D) or (N, L, D), got " + shape_str(xs));
    }
    const bool batched = xs.size() == 3;
    const std::int64_t n = batched ? xs[0] : 1;
    const std::int64_t len = xs[batched ? 1 : 0];
    const std::int64_t dd = xs[batched ? 2 : 1];
    if (a.shape().size() != 2 || a.dim(0) != dd) {
        throw ConfigError("selective_scan: A must be (D, S), got " + shape_str(a.shape()));
    }
    const std::int64_t ss = a.dim(1);
    const Shape bc_shape = batched ? Shape{n, len, ss} : Shape{len, ss};
    if (delta.shape() != xs || b.shape() != bc_shape || c.shape() != bc_shape || d_skip.shape() != Shape{dd}) {
        throw ConfigError("selective_scan: inconsistent shapes x" + shape_str(xs) + " delta" +
                          shape_str(delta.shape()) + " B" + shape_str(b.shape()) + " C" + shape_str(c.shape()) +
                          " D" + shape_str(d_skip.shape()));
    }
    for (auto v : delta.value().values()) {
        if (!(v >= T(0)) || !std::isfinite(v)) {
            throw NumericError("selective_scan: delta must be positive and finite");
        }
    }

    const T* xv = x.value().data();
    const T* dv = delta.value().data();
    const T* av = a.value().data();
    const T* bv = b.value().data();
    const T* cv = c.value().data();
    const T* dsv = d_skip.value().data();

    // States and decay factors for every (n, t, d, s), kept for the backward sweep.
    const auto states = static_cast<std::size_t>(n * len * dd * ss);
    auto hist = std::make_shared<std::vector<T>>(states);
    auto decay = std::make_shared<std::vector<T>>(states);
    Tensor<T> out(xs);
    std::vector<T> h(static_cast<std::size_t>(dd * ss));
    for (std::int64_t i = 0; i < n; ++i) {
        std::fill(h.begin(), h.end(), T(0));
        for (std::int64_t t = 0; t < len; ++t) {
            const std::int64_t row = i * len + t;
            const T* bt = bv + row * ss;
            const T* ct = cv + row * ss;
            for (std::int64_t d = 0; d < dd; ++d) {
                const T dt = dv[row * dd + d];
                const T xt = xv[row * dd + d];
                T y = dsv[d] * xt;
                T* hd = h.data() + d * ss;
                const std::size_t base = static_cast<std::size_t>((row * dd + d) * ss);
                for (std::int64_t s = 0; s < ss; ++s) {
                    const T abar = std::exp(dt * av[d * ss + s]);
                    hd[s] = abar * hd[s] + dt * bt[s] * xt;
                    (*decay)[base + s] = abar;
                    (*hist)[base + s] = hd[s];
                    y += ct[s] * hd[s];
                }
                out[row * dd + d] = y;
            }
        }
    }

    return make_result<T>(std::move(out), {x, delta, a, b, c, d_skip}, [=](Node<T>& self) {
        const T* xv = self.input_value(0).data();
        const T* dv = self.input_value(1).data();
        const T* av = self.input_value(2).data();
        const T* bv = self.input_value(3).data();
        const T* cv = self.input_value(4).data();
        const T* dsv = self.input_value(5).data();
        auto* gx = self.input_grad(0);
        auto* gdelta = self.input_grad(1);
        auto* ga = self.input_grad(2);
        auto* gb = self.input_grad(3);
        auto* gc = self.input_grad(4);
        auto* gds = self.input_grad(5);
        const T* gy = self.grad.data();
        std::vector<T> carry(static_cast<std::size_t>(ss));
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t d = 0; d < dd; ++d) {
                std::fill(carry.begin(), carry.end(), T(0));
                for (std::int64_t t = len - 1; t >= 0; --t) {
                    const std::int64_t row = i * len + t;
                    const T g = gy[row * dd + d];
                    const T dt = dv[row * dd + d];
                    const T xt = xv[row * dd + d];
                    const std::size_t base = static_cast<std::size_t>((row * dd + d) * ss);
                    const std::size_t prev = static_cast<std::size_t>(((row - 1) * dd + d) * ss);
                    T gx_acc = g * dsv[d];
                    T gdt_acc = 0;
                    for (std::int64_t s = 0; s < ss; ++s) {
                        const T ght = g * cv[row * ss + s] + carry[static_cast<std::size_t>(s)];
                        const T ht = (*hist)[base + s];
                        const T hprev = t > 0 ? (*hist)[prev + s] : T(0);
                        const T abar = (*decay)[base + s];
                        const T bts = bv[row * ss + s];
                        if (gc) {
                            (*gc)[row * ss + s] += g * ht;
                        }
                        if (ga) {
                            (*ga)[d * ss + s] += ght * dt * abar * hprev;
                        }
                        if (gb) {
                            (*gb)[row * ss + s] += ght * dt * xt;
                        }
                        gdt_acc += ght * (av[d * ss + s] * abar * hprev + bts * xt);
                        gx_acc += ght * dt * bts;
                        carry[static_cast<std::size_t>(s)] = abar * ght;
                    }
                    if (gx) {
                        (*gx)[row * dd + d] += gx_acc;
                    }
                    if (gdelta) {
                        (*gdelta)[row * dd + d] += gdt_acc;
                    }
                    if (gds) {
                        (*gds)[d] += g * xt;
                    }
                }
            }
        }
    });
}

template Var<float> selective_scan(const Var<float>&, const Var<float>&, const Var<float>&, const Var<float>&,
                                   const Var<float>&, const Var<float>&);
template Var<double> selective_scan(const Var<double>&, const Var<double>&, const Var<double>&, const Var<double>&,
                                    const Var<double>&, const Var<double>&);

} // namespace wmu
