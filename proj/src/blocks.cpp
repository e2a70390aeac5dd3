#include "wmu/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wmu {

template <typename T>
Var<T> ParamStore<T>::create(const std::string& name, Tensor<T> init)
{
    for (const auto& p : params_) {
        if (p.name() == name) {
            throw ConfigError("duplicate parameter name '" + name + "'");
        }
    }
    params_.emplace_back(std::move(init), true, name);
    return params_.back();
}

template <typename T>
Var<T> ParamStore<T>::he_uniform(const std::string& name, Shape shape, std::int64_t fan_in)
{
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return uniform(name, std::move(shape), -bound, bound);
}

template <typename T>
Var<T> ParamStore<T>::uniform(const std::string& name, Shape shape, double lo, double hi)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) {
        v = static_cast<T>(dist(rng_));
    }
    return create(name, std::move(t));
}

template <typename T>
Var<T> ParamStore<T>::constant(const std::string& name, Shape shape, T value)
{
    return create(name, Tensor<T>(std::move(shape), value));
}

template <typename T>
Projection<T> make_linear(ParamStore<T>& store, const std::string& name, std::int64_t in, std::int64_t out, bool bias)
{
    // Uniform with standard deviation 0.02, zero bias.
    const double bound = 0.02 * std::sqrt(3.0);
    Projection<T> p;
    p.weight = store.uniform(name + ".weight", {out, in}, -bound, bound);
    if (bias) {
        p.bias = store.constant(name + ".bias", {out}, T(0));
    }
    return p;
}

template <typename T>
Norm<T> make_norm(ParamStore<T>& store, const std::string& name, std::int64_t dim)
{
    return {store.constant(name + ".gamma", {dim}, T(1)), store.constant(name + ".beta", {dim}, T(0))};
}

// ---------------------------------------------------------------------------
// Index maps

IndexMap window_partition_index(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c, int window,
                                int shift)
{
    if (window <= 0 || h % window != 0 || w % window != 0) {
        throw ConfigError("window " + std::to_string(window) + " does not divide the " + std::to_string(h) + "x" +
                          std::to_string(w) + " feature map");
    }
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * h * w * c));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t wy = 0; wy < h / window; ++wy) {
            for (std::int64_t wx = 0; wx < w / window; ++wx) {
                for (std::int64_t ty = 0; ty < window; ++ty) {
                    for (std::int64_t tx = 0; tx < window; ++tx) {
                        const std::int64_t sy = (wy * window + ty + shift) % h;
                        const std::int64_t sx = (wx * window + tx + shift) % w;
                        for (std::int64_t ch = 0; ch < c; ++ch) {
                            (*idx)[o++] = ((i * h + sy) * w + sx) * c + ch;
                        }
                    }
                }
            }
        }
    }
    return idx;
}

IndexMap merge_index(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c)
{
    if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("patch_merge needs an even feature map, got " + std::to_string(h) + "x" +
                          std::to_string(w));
    }
    static constexpr std::int64_t kOffsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * h * w * c));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t y = 0; y < h / 2; ++y) {
            for (std::int64_t x = 0; x < w / 2; ++x) {
                for (const auto& off : kOffsets) {
                    const std::int64_t sy = 2 * y + off[0], sx = 2 * x + off[1];
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        (*idx)[o++] = ((i * h + sy) * w + sx) * c + ch;
                    }
                }
            }
        }
    }
    return idx;
}

IndexMap expand_index(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c, int factor)
{
    const std::int64_t f = factor;
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * h * w * f * f * c));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t y = 0; y < f * h; ++y) {
            for (std::int64_t x = 0; x < f * w; ++x) {
                const std::int64_t src_tok = (i * h + y / f) * w + x / f;
                const std::int64_t sub = (y % f) * f + x % f;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    (*idx)[o++] = src_tok * f * f * c + sub * c + ch;
                }
            }
        }
    }
    return idx;
}

IndexMap inverse_index(const std::vector<std::int64_t>& perm)
{
    auto inv = std::make_shared<std::vector<std::int64_t>>(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        (*inv)[static_cast<std::size_t>(perm[i])] = static_cast<std::int64_t>(i);
    }
    return inv;
}

namespace {

// (N, L, C) reordered along L by `positions` (sequence step -> token).
IndexMap sequence_index(std::int64_t n, const std::vector<std::int64_t>& positions, std::int64_t c)
{
    const auto len = static_cast<std::int64_t>(positions.size());
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * len * c));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        for (auto p : positions) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                (*idx)[o++] = (i * len + p) * c + ch;
            }
        }
    }
    return idx;
}

} // namespace

std::vector<std::int64_t> scan_positions(ScanOrder order, std::int64_t h, std::int64_t w)
{
    std::vector<std::int64_t> pos(static_cast<std::size_t>(h * w));
    for (std::int64_t t = 0; t < h * w; ++t) {
        switch (order) {
        case ScanOrder::RowForward:
            pos[static_cast<std::size_t>(t)] = t;
            break;
        case ScanOrder::RowBackward:
            pos[static_cast<std::size_t>(t)] = h * w - 1 - t;
            break;
        case ScanOrder::ColumnForward:
            pos[static_cast<std::size_t>(t)] = (t % h) * w + t / h;
            break;
        case ScanOrder::ColumnBackward: {
            const std::int64_t r = h * w - 1 - t;
            pos[static_cast<std::size_t>(t)] = (r % h) * w + r / h;
            break;
        }
        }
    }
    return pos;
}

// ---------------------------------------------------------------------------
// ConvBlock

template <typename T>
int ConvBlock<T>::groups_for(std::int64_t channels)
{
    return static_cast<int>(std::gcd(channels, std::int64_t{4}));
}

template <typename T>
ConvBlock<T>::ConvBlock(ParamStore<T>& store, const std::string& name, std::int64_t in_ch, std::int64_t out_ch)
    : groups_(groups_for(out_ch))
{
    w1_ = store.he_uniform(name + ".conv1.weight", {out_ch, in_ch, 3, 3}, in_ch * 9);
    b1_ = store.constant(name + ".conv1.bias", {out_ch}, T(0));
    n1_ = make_norm(store, name + ".norm1", out_ch);
    w2_ = store.he_uniform(name + ".conv2.weight", {out_ch, out_ch, 3, 3}, out_ch * 9);
    b2_ = store.constant(name + ".conv2.bias", {out_ch}, T(0));
    n2_ = make_norm(store, name + ".norm2", out_ch);
}

template <typename T>
Var<T> ConvBlock<T>::operator()(const Var<T>& x) const
{
    auto y = relu(group_norm(conv2d(x, w1_, b1_, 1, 1), groups_, n1_.gamma, n1_.beta));
    return relu(group_norm(conv2d(y, w2_, b2_, 1, 1), groups_, n2_.gamma, n2_.beta));
}

// ---------------------------------------------------------------------------
// Swin

template <typename T>
SwinBlock<T>::SwinBlock(ParamStore<T>& store, const std::string& name, const BlockConfig& cfg, int shift)
    : cfg_(cfg), shift_(shift)
{
    if (cfg.heads <= 0 || cfg.dim % cfg.heads != 0) {
        throw ConfigError("swin block: dim " + std::to_string(cfg.dim) + " not divisible by " +
                          std::to_string(cfg.heads) + " heads");
    }
    const std::int64_t d = cfg.dim;
    norm1_ = make_norm(store, name + ".norm1", d);
    q_ = make_linear(store, name + ".attn.q", d, d);
    k_ = make_linear(store, name + ".attn.k", d, d);
    v_ = make_linear(store, name + ".attn.v", d, d);
    o_ = make_linear(store, name + ".attn.o", d, d);
    norm2_ = make_norm(store, name + ".norm2", d);
    fc1_ = make_linear(store, name + ".mlp.fc1", d, 4 * d);
    fc2_ = make_linear(store, name + ".mlp.fc2", 4 * d, d);
}

template <typename T>
Var<T> SwinBlock<T>::operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const
{
    const std::int64_t n = x.dim(0), d = cfg_.dim;
    if (x.shape() != Shape{n, h * w, d}) {
        throw ConfigError("swin block: expected tokens (N, " + std::to_string(h * w) + ", " + std::to_string(d) +
                          "), got " + shape_str(x.shape()));
    }
    const int win = cfg_.window;
    const auto part = window_partition_index(n, h, w, d, win, shift_);
    const std::int64_t nw = n * (h / win) * (w / win);
    auto windows = gather(layer_norm(x, norm1_.gamma, norm1_.beta), part, Shape{nw, win * win, d});
    auto attn = window_attention(windows, q_, k_, v_, o_, cfg_.heads);
    auto x1 = add(x, gather(attn, inverse_index(*part), Shape{n, h * w, d}));
    auto mlp = fc2_(gelu(fc1_(layer_norm(x1, norm2_.gamma, norm2_.beta))));
    return add(x1, mlp);
}

template <typename T>
SwinBlockPair<T>::SwinBlockPair(ParamStore<T>& store, const std::string& name, const BlockConfig& cfg)
{
    blocks_.emplace_back(store, name + ".0", cfg, 0);
    blocks_.emplace_back(store, name + ".1", cfg, cfg.window / 2);
}

template <typename T>
Var<T> SwinBlockPair<T>::operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const
{
    return blocks_[1](blocks_[0](x, h, w), h, w);
}

// ---------------------------------------------------------------------------
// SS2D / VSS

template <typename T>
SS2D<T>::SS2D(ParamStore<T>& store, const std::string& name, std::int64_t d_inner, int d_state, int dt_rank)
    : d_inner_(d_inner), d_state_(d_state), dt_rank_(dt_rank)
{
    static constexpr const char* kDirNames[4] = {"row_fwd", "row_bwd", "col_fwd", "col_bwd"};
    for (std::size_t k = 0; k < 4; ++k) {
        const std::string base = name + "." + kDirNames[k];
        auto& p = dirs_[k];
        p.x_proj = make_linear(store, base + ".x_proj", d_inner, dt_rank + 2 * d_state, false);
        const double dt_bound = 1.0 / std::sqrt(static_cast<double>(dt_rank));
        p.dt_proj.weight = store.uniform(base + ".dt_proj.weight", {d_inner, dt_rank}, -dt_bound, dt_bound);
        // Initial step sizes log-uniform in [1e-3, 1e-1], stored through the inverse softplus.
        Tensor<T> dt_bias({d_inner});
        std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
        for (auto& v : dt_bias.values()) {
            const double dt = std::exp(u(store.rng()));
            v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
        }
        p.dt_proj.bias = store.create(base + ".dt_proj.bias", std::move(dt_bias));
        Tensor<T> a_log({d_inner, d_state});
        for (std::int64_t i = 0; i < d_inner; ++i) {
            for (std::int64_t s = 0; s < d_state; ++s) {
                a_log.at(i, s) = static_cast<T>(std::log(static_cast<double>(s + 1)));
            }
        }
        p.a_log = store.create(base + ".A_log", std::move(a_log));
        p.d_skip = store.constant(base + ".D", {d_inner}, T(1));
    }
}

template <typename T>
Var<T> SS2D<T>::scan(const Var<T>& x, std::int64_t h, std::int64_t w, ScanOrder order) const
{
    const std::int64_t n = x.dim(0), len = h * w;
    if (x.shape() != Shape{n, len, d_inner_}) {
        throw ConfigError("ss2d: expected (N, " + std::to_string(len) + ", " + std::to_string(d_inner_) +
                          "), got " + shape_str(x.shape()));
    }
    const auto& p = dirs_[static_cast<std::size_t>(order)];
    const auto positions = scan_positions(order, h, w);
    const Shape seq_shape{n, len, d_inner_};
    auto seq = gather(x, sequence_index(n, positions, d_inner_), seq_shape);
    auto proj = p.x_proj(seq);
    auto dt = slice_last(proj, 0, dt_rank_);
    auto b = slice_last(proj, dt_rank_, d_state_);
    auto c = slice_last(proj, dt_rank_ + d_state_, d_state_);
    auto delta = softplus(p.dt_proj(dt));
    auto y = selective_scan(seq, delta, neg_exp(p.a_log), b, c, p.d_skip);
    return gather(y, sequence_index(n, *inverse_index(positions), d_inner_), seq_shape);
}

template <typename T>
Var<T> SS2D<T>::operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const
{
    auto out = scan(x, h, w, ScanOrder::RowForward);
    for (auto order : {ScanOrder::RowBackward, ScanOrder::ColumnForward, ScanOrder::ColumnBackward}) {
        out = add(out, scan(x, h, w, order));
    }
    return out;
}

namespace {

int dt_rank_for(std::int64_t dim)
{
    return static_cast<int>(std::max<std::int64_t>(1, (dim + 15) / 16));
}

} // namespace

template <typename T>
VssBlock<T>::VssBlock(ParamStore<T>& store, const std::string& name, const BlockConfig& cfg)
    : dim_(cfg.dim), d_inner_(2 * cfg.dim), norm_(make_norm(store, name + ".norm", cfg.dim)),
      in_proj_(make_linear(store, name + ".in_proj", cfg.dim, 2 * d_inner_, false)),
      out_proj_(make_linear(store, name + ".out_proj", d_inner_, cfg.dim, false)),
      dw_weight_(store.he_uniform(name + ".dwconv.weight", {d_inner_, 1, 3, 3}, 9)),
      dw_bias_(store.constant(name + ".dwconv.bias", {d_inner_}, T(0))),
      ss2d_(store, name + ".ss2d", d_inner_, cfg.d_state, dt_rank_for(cfg.dim))
{
}

template <typename T>
Var<T> VssBlock<T>::operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const
{
    const std::int64_t n = x.dim(0);
    if (x.shape() != Shape{n, h * w, dim_}) {
        throw ConfigError("vss block: expected tokens (N, " + std::to_string(h * w) + ", " + std::to_string(dim_) +
                          "), got " + shape_str(x.shape()));
    }
    auto xz = in_proj_(layer_norm(x, norm_.gamma, norm_.beta));
    auto xi = slice_last(xz, 0, d_inner_);
    auto z = slice_last(xz, d_inner_, d_inner_);
    auto spatial = gather(xi, tokens_to_nchw_index(n, h, w, d_inner_), Shape{n, d_inner_, h, w});
    auto conv = depthwise_conv2d(spatial, dw_weight_, dw_bias_, 1);
    auto act = silu(gather(conv, nchw_to_tokens_index(n, d_inner_, h, w), Shape{n, h * w, d_inner_}));
    auto gated = mul(ss2d_(act, h, w), silu(z));
    return add(x, out_proj_(gated));
}

template <typename T>
VssBlockPair<T>::VssBlockPair(ParamStore<T>& store, const std::string& name, const BlockConfig& cfg)
{
    blocks_.emplace_back(store, name + ".0", cfg);
    blocks_.emplace_back(store, name + ".1", cfg);
}

template <typename T>
Var<T> VssBlockPair<T>::operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const
{
    return blocks_[1](blocks_[0](x, h, w), h, w);
}

// ---------------------------------------------------------------------------
// Resolution changes

template <typename T>
PatchEmbed<T>::PatchEmbed(ParamStore<T>& store, const std::string& name, int patch, std::int64_t dim)
    : patch_(patch), dim_(dim), proj_(make_linear(store, name + ".proj", std::int64_t{patch} * patch, dim)),
      norm_(make_norm(store, name + ".norm", dim))
{
}

template <typename T>
Var<T> PatchEmbed<T>::operator()(const Var<T>& image) const
{
    const auto& s = image.shape();
    if (s.size() != 4 || s[1] != 1) {
        throw ConfigError("patch_embed: expected (N, 1, H, W), got " + shape_str(s));
    }
    const std::int64_t n = s[0], h = s[2], w = s[3], p = patch_;
    if (h % p != 0 || w % p != 0) {
        throw ConfigError("patch_embed: image " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by patch " + std::to_string(p));
    }
    const std::int64_t hp = h / p, wp = w / p;
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * h * w));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t py = 0; py < hp; ++py) {
            for (std::int64_t px = 0; px < wp; ++px) {
                for (std::int64_t ky = 0; ky < p; ++ky) {
                    for (std::int64_t kx = 0; kx < p; ++kx) {
                        (*idx)[o++] = (i * h + py * p + ky) * w + px * p + kx;
                    }
                }
            }
        }
    }
    auto patches = gather(image, idx, Shape{n, hp * wp, p * p});
    return layer_norm(proj_(patches), norm_.gamma, norm_.beta);
}

template <typename T>
PatchMerge<T>::PatchMerge(ParamStore<T>& store, const std::string& name, std::int64_t dim)
    : dim_(dim), norm_(make_norm(store, name + ".norm", 4 * dim)),
      reduce_(make_linear(store, name + ".reduction", 4 * dim, 2 * dim, false))
{
}

template <typename T>
Var<T> PatchMerge<T>::operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const
{
    const std::int64_t n = x.dim(0);
    if (x.shape() != Shape{n, h * w, dim_}) {
        throw ConfigError("patch_merge: expected (N, " + std::to_string(h * w) + ", " + std::to_string(dim_) +
                          "), got " + shape_str(x.shape()));
    }
    auto cat = gather(x, merge_index(n, h, w, dim_), Shape{n, (h / 2) * (w / 2), 4 * dim_});
    return reduce_(layer_norm(cat, norm_.gamma, norm_.beta));
}

template <typename T>
PatchExpand<T>::PatchExpand(ParamStore<T>& store, const std::string& name, std::int64_t dim, int factor,
                            std::int64_t out_dim)
    : dim_(dim), out_dim_(out_dim), factor_(factor),
      expand_(make_linear(store, name + ".expand", dim, std::int64_t{factor} * factor * out_dim, false)),
      norm_(make_norm(store, name + ".norm", out_dim))
{
    if (factor < 2 || out_dim <= 0) {
        throw ConfigError("patch_expand: invalid factor/out_dim");
    }
}

template <typename T>
Var<T> PatchExpand<T>::operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const
{
    const std::int64_t n = x.dim(0), f = factor_;
    if (x.shape() != Shape{n, h * w, dim_}) {
        throw ConfigError("patch_expand: expected (N, " + std::to_string(h * w) + ", " + std::to_string(dim_) +
                          "), got " + shape_str(x.shape()));
    }
    auto wide = expand_(x);
    auto spread = gather(wide, expand_index(n, h, w, out_dim_, factor_), Shape{n, f * f * h * w, out_dim_});
    return layer_norm(spread, norm_.gamma, norm_.beta);
}

#define WMU_INSTANTIATE_BLOCKS(T)                                                                                  \
    template class ParamStore<T>;                                                                                 \
    template Projection<T> make_linear(ParamStore<T>&, const std::string&, std::int64_t, std::int64_t, bool);     \
    template Norm<T> make_norm(ParamStore<T>&, const std::string&, std::int64_t);                                 \
    template class ConvBlock<T>;                                                                                  \
    template class SwinBlock<T>;                                                                                  \
    template class SwinBlockPair<T>;                                                                              \
    template class SS2D<T>;                                                                                       \
    template class VssBlock<T>;                                                                                   \
    template class VssBlockPair<T>;                                                                               \
    template class PatchEmbed<T>;                                                                                 \
    template class PatchMerge<T>;                                                                                 \
    template class PatchExpand<T>;

WMU_INSTANTIATE_BLOCKS(float)
WMU_INSTANTIATE_BLOCKS(double)

} // namespace wmu
