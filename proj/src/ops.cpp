#include "wmu/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wmu {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

void require(bool cond, const std::string& msg)
{
    if (!cond) {
        throw ConfigError(msg);
    }
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op)
{
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& a, Fwd fwd, Deriv deriv)
{
    Tensor<T> out(a.shape());
    const auto& x = a.value();
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        out[i] = fwd(x[i]);
    }
    return make_result<T>(std::move(out), {a}, [deriv](Node<T>& self) {
        const auto& x = self.input_value(0);
        auto& gx = *self.input_grad(0);
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            gx[i] += self.grad[i] * deriv(x[i]);
        }
    });
}

} // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b)
{
    require_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        out[i] = a.value()[i] + b.value()[i];
    }
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (auto* g = self.input_grad(k)) {
                for (std::int64_t i = 0; i < g->numel(); ++i) {
                    (*g)[i] += self.grad[i];
                }
            }
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b)
{
    require_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        out[i] = a.value()[i] * b.value()[i];
    }
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.input_value(0);
        const auto& bv = self.input_value(1);
        if (auto* g = self.input_grad(0)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) {
                (*g)[i] += self.grad[i] * bv[i];
            }
        }
        if (auto* g = self.input_grad(1)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) {
                (*g)[i] += self.grad[i] * av[i];
            }
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s)
{
    Tensor<T> out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        out[i] = a.value()[i] * s;
    }
    return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
        auto& g = *self.input_grad(0);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            g[i] += self.grad[i] * s;
        }
    });
}

template <typename T>
Var<T> sum(const Var<T>& a)
{
    T total = 0;
    for (auto v : a.value().values()) {
        total += v;
    }
    return make_result<T>(Tensor<T>({1}, std::vector<T>{total}), {a}, [](Node<T>& self) {
        auto& g = *self.input_grad(0);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            g[i] += self.grad[0];
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& a)
{
    return unary(
        a, [](T x) { return x > T(0) ? x : T(0); }, [](T x) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> silu(const Var<T>& a)
{
    return unary(
        a, [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x) {
            T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
Var<T> gelu(const Var<T>& a)
{
    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return unary(
        a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * T(kInvSqrt2))); },
        [](T x) {
            return T(0.5) * (T(1) + std::erf(x * T(kInvSqrt2))) + x * T(kInvSqrt2Pi) * std::exp(T(-0.5) * x * x);
        });
}

template <typename T>
Var<T> softplus(const Var<T>& a)
{
    return unary(
        a, [](T x) { return x > T(20) ? x : std::log1p(std::exp(x)); },
        [](T x) { return T(1) / (T(1) + std::exp(-x)); });
}

template <typename T>
Var<T> neg_exp(const Var<T>& a)
{
    return unary(
        a, [](T x) { return -std::exp(x); }, [](T x) { return -std::exp(x); });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape)
{
    require(shape_numel(shape) == a.value().numel(),
            "reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
    return make_result<T>(a.value().reshaped(std::move(shape)), {a}, [](Node<T>& self) {
        auto& g = *self.input_grad(0);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> gather(const Var<T>& a, IndexMap index, Shape shape)
{
    require(static_cast<std::int64_t>(index->size()) == shape_numel(shape),
            "gather: index length does not match output shape " + shape_str(shape));
    Tensor<T> out(std::move(shape));
    const auto& x = a.value();
    const auto& idx = *index;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out[static_cast<std::int64_t>(i)] = x[idx[i]];
    }
    return make_result<T>(std::move(out), {a}, [index](Node<T>& self) {
        auto& g = *self.input_grad(0);
        const auto& idx = *index;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            g[idx[i]] += self.grad[static_cast<std::int64_t>(i)];
        }
    });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b)
{
    const auto& as = a.shape();
    const auto& bs = b.shape();
    require(as.size() == 4 && bs.size() == 4 && as[0] == bs[0] && as[2] == bs[2] && as[3] == bs[3],
            "concat_channels: incompatible " + shape_str(as) + " and " + shape_str(bs));
    const std::int64_t n = as[0], ca = as[1], cb = bs[1], hw = as[2] * as[3];
    Tensor<T> out({n, ca + cb, as[2], as[3]});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(a.value().data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
        std::copy_n(b.value().data() + i * cb * hw, cb * hw, out.data() + i * (ca + cb) * hw + ca * hw);
    }
    return make_result<T>(std::move(out), {a, b}, [n, ca, cb, hw](Node<T>& self) {
        if (auto* g = self.input_grad(0)) {
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < ca * hw; ++j) {
                    (*g)[i * ca * hw + j] += self.grad[i * (ca + cb) * hw + j];
                }
            }
        }
        if (auto* g = self.input_grad(1)) {
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < cb * hw; ++j) {
                    (*g)[i * cb * hw + j] += self.grad[i * (ca + cb) * hw + ca * hw + j];
                }
            }
        }
    });
}

template <typename T>
Var<T> slice_last(const Var<T>& a, std::int64_t start, std::int64_t len)
{
    const std::int64_t cols = a.shape().back();
    require(start >= 0 && len > 0 && start + len <= cols, "slice_last: range out of bounds");
    const std::int64_t rows = a.value().numel() / cols;
    Shape shape = a.shape();
    shape.back() = len;
    Tensor<T> out(shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy_n(a.value().data() + r * cols + start, len, out.data() + r * len);
    }
    return make_result<T>(std::move(out), {a}, [rows, cols, start, len](Node<T>& self) {
        auto& g = *self.input_grad(0);
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t j = 0; j < len; ++j) {
                g[r * cols + start + j] += self.grad[r * len + j];
            }
        }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias)
{
    require(weight.shape().size() == 2, "linear: weight must be (out, in)");
    const std::int64_t in = weight.dim(1), out_dim = weight.dim(0);
    require(x.shape().back() == in, "linear: input width " + std::to_string(x.shape().back()) +
                                        " does not match weight " + shape_str(weight.shape()));
    require(!bias.defined() || bias.shape() == Shape{out_dim}, "linear: bias must be (out)");
    const std::int64_t rows = x.value().numel() / in;
    Shape shape = x.shape();
    shape.back() = out_dim;
    Tensor<T> out(shape);
    CMapR<T> xm(x.value().data(), rows, in);
    CMapR<T> wm(weight.value().data(), out_dim, in);
    MapR<T> ym(out.data(), rows, out_dim);
    ym.noalias() = xm * wm.transpose();
    if (bias.defined()) {
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(bias.value().data(), out_dim);
        ym.rowwise() += bm;
    }
    std::vector<Var<T>> inputs{x, weight};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    return make_result<T>(std::move(out), std::move(inputs), [rows, in, out_dim](Node<T>& self) {
        CMapR<T> gy(self.grad.data(), rows, out_dim);
        if (auto* g = self.input_grad(0)) {
            CMapR<T> wm(self.input_value(1).data(), out_dim, in);
            MapR<T> gx(g->data(), rows, in);
            gx.noalias() += gy * wm;
        }
        if (auto* g = self.input_grad(1)) {
            CMapR<T> xm(self.input_value(0).data(), rows, in);
            MapR<T> gw(g->data(), out_dim, in);
            gw.noalias() += gy.transpose() * xm;
        }
        if (self.inputs.size() > 2) {
            if (auto* g = self.input_grad(2)) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(g->data(), out_dim);
                gb += gy.colwise().sum();
            }
        }
    });
}

namespace {

// cols is (C*K*K, Ho*Wo) row-major.
template <typename T>
void im2col(const T* img, std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride, int pad,
            std::int64_t ho, std::int64_t wo, T* cols)
{
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = cols + ((ch * k + ky) * k + kx) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        row[oy * wo + ox] =
                            (iy >= 0 && iy < h && ix >= 0 && ix < w) ? img[(ch * h + iy) * w + ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride, int pad,
            std::int64_t ho, std::int64_t wo, T* img)
{
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = cols + ((ch * k + ky) * k + kx) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) {
                            img[(ch * h + iy) * w + ix] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, int stride, int padding)
{
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    require(is.size() == 4, "conv2d: input must be NCHW, got " + shape_str(is));
    require(ks.size() == 4 && ks[2] == ks[3], "conv2d: kernel must be (O, I, K, K), got " + shape_str(ks));
    require(ks[2] % 2 == 1, "conv2d: kernel size must be odd");
    require(ks[1] == is[1], "conv2d: input has " + std::to_string(is[1]) + " channels, kernel expects " +
                                std::to_string(ks[1]));
    require(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
    require(!bias.defined() || bias.shape() == Shape{ks[0]}, "conv2d: bias must be (O)");
    const std::int64_t n = is[0], c = is[1], h = is[2], w = is[3], o = ks[0];
    const int k = static_cast<int>(ks[2]);
    const std::int64_t ho = (h + 2 * padding - k) / stride + 1;
    const std::int64_t wo = (w + 2 * padding - k) / stride + 1;
    require(ho > 0 && wo > 0, "conv2d: input smaller than kernel");
    const std::int64_t ckk = c * k * k, hw = ho * wo;

    Tensor<T> out({n, o, ho, wo});
    AlignedVector<T> cols(static_cast<std::size_t>(ckk * hw));
    CMapR<T> wm(kernel.value().data(), o, ckk);
    for (std::int64_t i = 0; i < n; ++i) {
        im2col(input.value().data() + i * c * h * w, c, h, w, k, stride, padding, ho, wo, cols.data());
        MapR<T> ym(out.data() + i * o * hw, o, hw);
        ym.noalias() = wm * CMapR<T>(cols.data(), ckk, hw);
        if (bias.defined()) {
            Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bm(bias.value().data(), o);
            ym.colwise() += bm;
        }
    }

    std::vector<Var<T>> inputs{input, kernel};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    return make_result<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
        const auto& x = self.input_value(0);
        CMapR<T> wm(self.input_value(1).data(), o, ckk);
        auto* gx = self.input_grad(0);
        auto* gw = self.input_grad(1);
        Tensor<T>* gb = self.inputs.size() > 2 ? self.input_grad(2) : nullptr;
        AlignedVector<T> cols(static_cast<std::size_t>(ckk * hw));
        MatR<T> gcols;
        for (std::int64_t i = 0; i < n; ++i) {
            CMapR<T> gy(self.grad.data() + i * o * hw, o, hw);
            if (gw) {
                im2col(x.data() + i * c * h * w, c, h, w, k, stride, padding, ho, wo, cols.data());
                MapR<T>(gw->data(), o, ckk).noalias() += gy * CMapR<T>(cols.data(), ckk, hw).transpose();
            }
            if (gb) {
                Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb->data(), o) += gy.rowwise().sum();
            }
            if (gx) {
                gcols.noalias() = wm.transpose() * gy;
                col2im(gcols.data(), c, h, w, k, stride, padding, ho, wo, gx->data() + i * c * h * w);
            }
        }
    });
}

template <typename T>
Var<T> depthwise_conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, int padding)
{
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    require(is.size() == 4, "depthwise_conv2d: input must be NCHW");
    require(ks.size() == 4 && ks[0] == is[1] && ks[1] == 1 && ks[2] == ks[3] && ks[2] % 2 == 1,
            "depthwise_conv2d: kernel must be (C, 1, K, K) with odd K, got " + shape_str(ks));
    require(!bias.defined() || bias.shape() == Shape{is[1]}, "depthwise_conv2d: bias must be (C)");
    const std::int64_t n = is[0], c = is[1], h = is[2], w = is[3];
    const std::int64_t k = ks[2];
    const std::int64_t ho = h + 2 * padding - k + 1, wo = w + 2 * padding - k + 1;
    require(ho > 0 && wo > 0, "depthwise_conv2d: input smaller than kernel");
    Tensor<T> out({n, c, ho, wo});
    const auto& x = input.value();
    const auto& kv = kernel.value();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T* src = x.data() + (i * c + ch) * h * w;
            const T* kk = kv.data() + ch * k * k;
            T* dst = out.data() + (i * c + ch) * ho * wo;
            const T b = bias.defined() ? bias.value()[ch] : T(0);
            for (std::int64_t oy = 0; oy < ho; ++oy) {
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    T acc = b;
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        const std::int64_t iy = oy - padding + ky;
                        if (iy < 0 || iy >= h) {
                            continue;
                        }
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::int64_t ix = ox - padding + kx;
                            if (ix >= 0 && ix < w) {
                                acc += kk[ky * k + kx] * src[iy * w + ix];
                            }
                        }
                    }
                    dst[oy * wo + ox] = acc;
                }
            }
        }
    }
    std::vector<Var<T>> inputs{input, kernel};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    return make_result<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
        const auto& x = self.input_value(0);
        const auto& kv = self.input_value(1);
        auto* gx = self.input_grad(0);
        auto* gk = self.input_grad(1);
        Tensor<T>* gb = self.inputs.size() > 2 ? self.input_grad(2) : nullptr;
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const T* src = x.data() + (i * c + ch) * h * w;
                const T* kk = kv.data() + ch * k * k;
                const T* gy = self.grad.data() + (i * c + ch) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const T g = gy[oy * wo + ox];
                        if (gb) {
                            (*gb)[ch] += g;
                        }
                        for (std::int64_t ky = 0; ky < k; ++ky) {
                            const std::int64_t iy = oy - padding + ky;
                            if (iy < 0 || iy >= h) {
                                continue;
                            }
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const std::int64_t ix = ox - padding + kx;
                                if (ix < 0 || ix >= w) {
                                    continue;
                                }
                                if (gk) {
                                    (*gk)[ch * k * k + ky * k + kx] += g * src[iy * w + ix];
                                }
                                if (gx) {
                                    (*gx)[(i * c + ch) * h * w + iy * w + ix] += g * kk[ky * k + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b)
{
    const auto& as = a.shape();
    const auto& bs = b.shape();
    require(as.size() == 3 && bs.size() == 3 && as[0] == bs[0], "bmm: operands must be rank-3 with equal batch");
    const std::int64_t batch = as[0], m = as[1], k = as[2];
    const std::int64_t n = transpose_b ? bs[1] : bs[2];
    require((transpose_b ? bs[2] : bs[1]) == k, "bmm: inner dimensions differ: " + shape_str(as) + " x " +
                                                    shape_str(bs));
    const std::int64_t br = bs[1], bc = bs[2];
    Tensor<T> out({batch, m, n});
    for (std::int64_t i = 0; i < batch; ++i) {
        CMapR<T> am(a.value().data() + i * m * k, m, k);
        CMapR<T> bm(b.value().data() + i * br * bc, br, bc);
        MapR<T> ym(out.data() + i * m * n, m, n);
        if (transpose_b) {
            ym.noalias() = am * bm.transpose();
        } else {
            ym.noalias() = am * bm;
        }
    }
    return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
        auto* ga = self.input_grad(0);
        auto* gb = self.input_grad(1);
        for (std::int64_t i = 0; i < batch; ++i) {
            CMapR<T> gy(self.grad.data() + i * m * n, m, n);
            CMapR<T> am(self.input_value(0).data() + i * m * k, m, k);
            CMapR<T> bm(self.input_value(1).data() + i * br * bc, br, bc);
            if (ga) {
                MapR<T> g(ga->data() + i * m * k, m, k);
                if (transpose_b) {
                    g.noalias() += gy * bm;
                } else {
                    g.noalias() += gy * bm.transpose();
                }
            }
            if (gb) {
                MapR<T> g(gb->data() + i * br * bc, br, bc);
                if (transpose_b) {
                    g.noalias() += gy.transpose() * am;
                } else {
                    g.noalias() += am.transpose() * gy;
                }
            }
        }
    });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps)
{
    const std::int64_t d = x.shape().back();
    require(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
            "layer_norm: affine parameters must have width " + std::to_string(d));
    const std::int64_t rows = x.value().numel() / d;
    Tensor<T> out(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows * d));
    auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
    const T* xv = x.value().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        T mean = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            mean += xv[r * d + j];
        }
        mean /= T(d);
        T var = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const T dv = xv[r * d + j] - mean;
            var += dv * dv;
        }
        var /= T(d);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::int64_t j = 0; j < d; ++j) {
            const T xh = (xv[r * d + j] - mean) * rs;
            (*xhat)[r * d + j] = xh;
            out[r * d + j] = xh * gamma.value()[j] + beta.value()[j];
        }
    }
    return make_result<T>(std::move(out), {x, gamma, beta}, [rows, d, xhat, rstd](Node<T>& self) {
        const auto& gv = self.input_value(1);
        auto* gx = self.input_grad(0);
        auto* gg = self.input_grad(1);
        auto* gbeta = self.input_grad(2);
        std::vector<T> gxh(static_cast<std::size_t>(d));
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* gy = self.grad.data() + r * d;
            const T* xh = xhat->data() + r * d;
            T mean_g = 0, mean_gx = 0;
            for (std::int64_t j = 0; j < d; ++j) {
                if (gg) {
                    (*gg)[j] += gy[j] * xh[j];
                }
                if (gbeta) {
                    (*gbeta)[j] += gy[j];
                }
                gxh[j] = gy[j] * gv[j];
                mean_g += gxh[j];
                mean_gx += gxh[j] * xh[j];
            }
            if (gx) {
                mean_g /= T(d);
                mean_gx /= T(d);
                const T rs = (*rstd)[r];
                for (std::int64_t j = 0; j < d; ++j) {
                    (*gx)[r * d + j] += rs * (gxh[j] - mean_g - xh[j] * mean_gx);
                }
            }
        }
    });
}

template <typename T>
Var<T> group_norm(const Var<T>& x, int groups, const Var<T>& gamma, const Var<T>& beta, T eps)
{
    const auto& s = x.shape();
    require(s.size() == 4, "group_norm: input must be NCHW");
    const std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    require(groups > 0 && c % groups == 0,
            "group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
    require(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, "group_norm: affine parameters must be (C)");
    const std::int64_t cpg = c / groups, gsize = cpg * hw;
    Tensor<T> out(s);
    auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.value().numel()));
    auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * groups));
    const T* xv = x.value().data();
    for (std::int64_t i = 0; i < n * groups; ++i) {
        const T* src = xv + i * gsize;
        T mean = 0;
        for (std::int64_t j = 0; j < gsize; ++j) {
            mean += src[j];
        }
        mean /= T(gsize);
        T var = 0;
        for (std::int64_t j = 0; j < gsize; ++j) {
            var += (src[j] - mean) * (src[j] - mean);
        }
        var /= T(gsize);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[i] = rs;
        for (std::int64_t j = 0; j < gsize; ++j) {
            const std::int64_t ch = (i % groups) * cpg + j / hw;
            const T xh = (src[j] - mean) * rs;
            (*xhat)[i * gsize + j] = xh;
            out[i * gsize + j] = xh * gamma.value()[ch] + beta.value()[ch];
        }
    }
    return make_result<T>(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
        const auto& gv = self.input_value(1);
        auto* gx = self.input_grad(0);
        auto* gg = self.input_grad(1);
        auto* gbeta = self.input_grad(2);
        std::vector<T> gxh(static_cast<std::size_t>(gsize));
        for (std::int64_t i = 0; i < n * groups; ++i) {
            const T* gy = self.grad.data() + i * gsize;
            const T* xh = xhat->data() + i * gsize;
            T mean_g = 0, mean_gx = 0;
            for (std::int64_t j = 0; j < gsize; ++j) {
                const std::int64_t ch = (i % groups) * cpg + j / hw;
                if (gg) {
                    (*gg)[ch] += gy[j] * xh[j];
                }
                if (gbeta) {
                    (*gbeta)[ch] += gy[j];
                }
                gxh[j] = gy[j] * gv[ch];
                mean_g += gxh[j];
                mean_gx += gxh[j] * xh[j];
            }
            if (gx) {
                mean_g /= T(gsize);
                mean_gx /= T(gsize);
                const T rs = (*rstd)[i];
                for (std::int64_t j = 0; j < gsize; ++j) {
                    (*gx)[i * gsize + j] += rs * (gxh[j] - mean_g - xh[j] * mean_gx);
                }
            }
        }
    });
}

template <typename T>
Var<T> maxpool2x(const Var<T>& x)
{
    const auto& s = x.shape();
    require(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0,
            "maxpool2x: need NCHW with even H, W, got " + shape_str(s));
    const std::int64_t planes = s[0] * s[1], h = s[2], w = s[3], ho = h / 2, wo = w / 2;
    Tensor<T> out({s[0], s[1], ho, wo});
    auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
    const T* xv = x.value().data();
    for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                std::int64_t best = p * h * w + (2 * oy) * w + 2 * ox;
                for (std::int64_t dy = 0; dy < 2; ++dy) {
                    for (std::int64_t dx = 0; dx < 2; ++dx) {
                        const std::int64_t idx = p * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if (xv[idx] > xv[best]) {
                            best = idx;
                        }
                    }
                }
                const std::int64_t o = (p * ho + oy) * wo + ox;
                (*arg)[o] = best;
                out[o] = xv[best];
            }
        }
    }
    return make_result<T>(std::move(out), {x}, [arg](Node<T>& self) {
        auto& g = *self.input_grad(0);
        for (std::size_t i = 0; i < arg->size(); ++i) {
            g[(*arg)[i]] += self.grad[static_cast<std::int64_t>(i)];
        }
    });
}

namespace {

struct Tap {
    std::int64_t i0, i1;
    double w1;
};

// Source taps for one axis of half-pixel-centre 2x upsampling.
std::vector<Tap> upsample_taps(std::int64_t in)
{
    std::vector<Tap> taps(static_cast<std::size_t>(2 * in));
    for (std::int64_t o = 0; o < 2 * in; ++o) {
        double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        src = std::max(src, 0.0);
        auto i0 = static_cast<std::int64_t>(std::floor(src));
        i0 = std::min(i0, in - 1);
        const std::int64_t i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

} // namespace

template <typename T>
Var<T> bilinear_upsample2x(const Var<T>& x)
{
    const auto& s = x.shape();
    require(s.size() == 4, "bilinear_upsample2x: input must be NCHW");
    const std::int64_t planes = s[0] * s[1], h = s[2], w = s[3];
    const auto ty = upsample_taps(h);
    const auto tx = upsample_taps(w);
    Tensor<T> out({s[0], s[1], 2 * h, 2 * w});
    const T* xv = x.value().data();
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* src = xv + p * h * w;
        T* dst = out.data() + p * 4 * h * w;
        for (std::int64_t oy = 0; oy < 2 * h; ++oy) {
            const auto& a = ty[static_cast<std::size_t>(oy)];
            const T wy1 = T(a.w1), wy0 = T(1) - wy1;
            for (std::int64_t ox = 0; ox < 2 * w; ++ox) {
                const auto& b = tx[static_cast<std::size_t>(ox)];
                const T wx1 = T(b.w1), wx0 = T(1) - wx1;
                dst[oy * 2 * w + ox] = wy0 * (wx0 * src[a.i0 * w + b.i0] + wx1 * src[a.i0 * w + b.i1]) +
                                       wy1 * (wx0 * src[a.i1 * w + b.i0] + wx1 * src[a.i1 * w + b.i1]);
            }
        }
    }
    return make_result<T>(std::move(out), {x}, [planes, h, w, ty, tx](Node<T>& self) {
        auto& g = *self.input_grad(0);
        for (std::int64_t p = 0; p < planes; ++p) {
            T* dst = g.data() + p * h * w;
            const T* gy = self.grad.data() + p * 4 * h * w;
            for (std::int64_t oy = 0; oy < 2 * h; ++oy) {
                const auto& a = ty[static_cast<std::size_t>(oy)];
                const T wy1 = T(a.w1), wy0 = T(1) - wy1;
                for (std::int64_t ox = 0; ox < 2 * w; ++ox) {
                    const auto& b = tx[static_cast<std::size_t>(ox)];
                    const T wx1 = T(b.w1), wx0 = T(1) - wx1;
                    const T v = gy[oy * 2 * w + ox];
                    dst[a.i0 * w + b.i0] += v * wy0 * wx0;
                    dst[a.i0 * w + b.i1] += v * wy0 * wx1;
                    dst[a.i1 * w + b.i0] += v * wy1 * wx0;
                    dst[a.i1 * w + b.i1] += v * wy1 * wx1;
                }
            }
        }
    });
}

namespace {

// Softmax over `count` entries spaced `inner` apart; the tensor is viewed as
// (outer, count, inner).
template <typename T>
Var<T> strided_softmax(const Var<T>& x, std::int64_t outer, std::int64_t count, std::int64_t inner)
{
    Tensor<T> out(x.shape());
    const T* xv = x.value().data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * count * inner + in;
            T mx = xv[base];
            for (std::int64_t k = 0; k < count; ++k) {
                const T v = xv[base + k * inner];
                if (std::isnan(v)) {
                    throw NumericError("softmax: NaN input");
                }
                mx = std::max(mx, v);
            }
            T z = 0;
            for (std::int64_t k = 0; k < count; ++k) {
                const T e = std::exp(xv[base + k * inner] - mx);
                out[base + k * inner] = e;
                z += e;
            }
            for (std::int64_t k = 0; k < count; ++k) {
                out[base + k * inner] /= z;
            }
        }
    }
    return make_result<T>(std::move(out), {x}, [outer, count, inner](Node<T>& self) {
        auto& g = *self.input_grad(0);
        const auto& y = self.value;
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t in = 0; in < inner; ++in) {
                const std::int64_t base = o * count * inner + in;
                T dot = 0;
                for (std::int64_t k = 0; k < count; ++k) {
                    dot += self.grad[base + k * inner] * y[base + k * inner];
                }
                for (std::int64_t k = 0; k < count; ++k) {
                    const std::int64_t i = base + k * inner;
                    g[i] += y[i] * (self.grad[i] - dot);
                }
            }
        }
    });
}

} // namespace

template <typename T>
Var<T> softmax_last(const Var<T>& x)
{
    const std::int64_t d = x.shape().back();
    return strided_softmax(x, x.value().numel() / d, d, 1);
}

template <typename T>
Var<T> softmax_channels(const Var<T>& logits)
{
    const auto& s = logits.shape();
    require(s.size() == 4, "softmax_channels: logits must be (N, K, H, W)");
    return strided_softmax(logits, s[0], s[1], s[2] * s[3]);
}

IndexMap tokens_to_nchw_index(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c)
{
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * c * h * w));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t p = 0; p < h * w; ++p) {
                (*idx)[o++] = (i * h * w + p) * c + ch;
            }
        }
    }
    return idx;
}

IndexMap nchw_to_tokens_index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w)
{
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * c * h * w));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t p = 0; p < h * w; ++p) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                (*idx)[o++] = (i * c + ch) * h * w + p;
            }
        }
    }
    return idx;
}

#define WMU_INSTANTIATE_OPS(T)                                                                            \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> scale(const Var<T>&, T);                                                              \
    template Var<T> sum(const Var<T>&);                                                                   \
    template Var<T> relu(const Var<T>&);                                                                  \
    template Var<T> silu(const Var<T>&);                                                                  \
    template Var<T> gelu(const Var<T>&);                                                                  \
    template Var<T> softplus(const Var<T>&);                                                              \
    template Var<T> neg_exp(const Var<T>&);                                                               \
    template Var<T> reshape(const Var<T>&, Shape);                                                        \
    template Var<T> gather(const Var<T>&, IndexMap, Shape);                                               \
    template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                        \
    template Var<T> slice_last(const Var<T>&, std::int64_t, std::int64_t);                                \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                  \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                        \
    template Var<T> depthwise_conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int);                   \
    template Var<T> bmm(const Var<T>&, const Var<T>&, bool);                                              \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                           \
    template Var<T> group_norm(const Var<T>&, int, const Var<T>&, const Var<T>&, T);                      \
    template Var<T> maxpool2x(const Var<T>&);                                                             \
    template Var<T> bilinear_upsample2x(const Var<T>&);                                                   \
    template Var<T> softmax_last(const Var<T>&);                                                          \
    template Var<T> softmax_channels(const Var<T>&);

WMU_INSTANTIATE_OPS(float)
WMU_INSTANTIATE_OPS(double)

} // namespace wmu
