#include "wmu/attention.hpp"

#include <cmath>

namespace wmu {

namespace {

// (nw, len, heads*dh) -> (nw*heads, len, dh)
IndexMap split_heads_index(std::int64_t nw, std::int64_t len, std::int64_t heads, std::int64_t dh)
{
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(nw * len * heads * dh));
    std::size_t o = 0;
    for (std::int64_t w = 0; w < nw; ++w) {
        for (std::int64_t h = 0; h < heads; ++h) {
            for (std::int64_t t = 0; t < len; ++t) {
                for (std::int64_t e = 0; e < dh; ++e) {
                    (*idx)[o++] = (w * len + t) * heads * dh + h * dh + e;
                }
            }
        }
    }
    return idx;
}

// Inverse of split_heads_index.
IndexMap merge_heads_index(std::int64_t nw, std::int64_t len, std::int64_t heads, std::int64_t dh)
{
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(nw * len * heads * dh));
    std::size_t o = 0;
    for (std::int64_t w = 0; w < nw; ++w) {
        for (std::int64_t t = 0; t < len; ++t) {
            for (std::int64_t h = 0; h < heads; ++h) {
                for (std::int64_t e = 0; e < dh; ++e) {
                    (*idx)[o++] = ((w * heads + h) * len + t) * dh + e;
                }
            }
        }
    }
    return idx;
}

} // namespace

template <typename T>
Var<T> window_attention(const Var<T>& tokens, const Projection<T>& q, const Projection<T>& k, const Projection<T>& v,
                        const Projection<T>& o, int num_heads)
{
    const auto& s = tokens.shape();
    if (s.size() != 3) {
        throw ConfigError("window_attention: tokens must be (num_windows, window_len, dim), got " + shape_str(s));
    }
    const std::int64_t nw = s[0], len = s[1], dim = s[2];
    if (num_heads <= 0 || dim % num_heads != 0) {
        throw ConfigError("window_attention: dim " + std::to_string(dim) + " not divisible by " +
                          std::to_string(num_heads) + " heads");
    }
    const std::int64_t dh = dim / num_heads;
    const auto split = split_heads_index(nw, len, num_heads, dh);
    const Shape head_shape{nw * num_heads, len, dh};

    auto qh = gather(q(tokens), split, head_shape);
    auto kh = gather(k(tokens), split, head_shape);
    auto vh = gather(v(tokens), split, head_shape);
    auto scores = scale(bmm(qh, kh, true), T(1) / std::sqrt(T(dh)));
    auto attn = softmax_last(scores);
    auto ctx = bmm(attn, vh, false);
    auto merged = gather(ctx, merge_heads_index(nw, len, num_heads, dh), Shape{nw, len, dim});
    return o(merged);
}

template Var<float> window_attention(const Var<float>&, const Projection<float>&, const Projection<float>&,
                                     const Projection<float>&, const Projection<float>&, int);
template Var<double> window_attention(const Var<double>&, const Projection<double>&, const Projection<double>&,
                                      const Projection<double>&, const Projection<double>&, int);

} // namespace wmu
