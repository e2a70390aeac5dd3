#pragma once

#include "wmu/ops.hpp"

namespace wmu {

/// Weight (out, in) and optional bias (out) of one linear projection.
template <typename T>
struct Projection {
    Var<T> weight;
    Var<T> bias;

    Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

/// Multi-head self-attention computed independently inside each window.
/// tokens: (num_windows, window_len, dim). Per window and head the result is
/// softmax(Q K^T / sqrt(d_head)) V; heads are concatenated and passed through
/// the output projection. Throws ConfigError unless dim % num_heads == 0.
template <typename T>
Var<T> window_attention(const Var<T>& tokens, const Projection<T>& q, const Projection<T>& k, const Projection<T>& v,
                        const Projection<T>& o, int num_heads);

} // namespace wmu
