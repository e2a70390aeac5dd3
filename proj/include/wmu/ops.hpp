#pragma once

#include "wmu/autograd.hpp"

#include <memory>
#include <vector>

namespace wmu {

using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;

// Elementwise and reductions.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> silu(const Var<T>& a);
/// Exact (erf-based) GELU.
template <typename T> Var<T> gelu(const Var<T>& a);
template <typename T> Var<T> softplus(const Var<T>& a);
/// -exp(a); keeps SSM state matrices strictly negative.
template <typename T> Var<T> neg_exp(const Var<T>& a);

// Layout.
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
/// out.flat[i] = a.flat[index[i]]; backward scatters (adds) into a.
template <typename T> Var<T> gather(const Var<T>& a, IndexMap index, Shape shape);
/// Concatenates two NCHW tensors along C.
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
/// Columns [start, start+len) of the last dimension.
template <typename T> Var<T> slice_last(const Var<T>& a, std::int64_t start, std::int64_t len);

// Dense layers.
/// y = x W^T + b over the last dimension; W is (out, in), b is (out) or undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
/// Cross-correlation on NCHW input with an (O, I, K, K) kernel.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, int stride, int padding);
/// Per-channel KxK convolution, kernel (C, 1, K, K), stride 1.
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, int padding);
/// Batched (B, M, K) x (B, K, N), or (B, M, K) x (B, N, K)^T when transpose_b.
template <typename T> Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b);

// Normalization.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
/// Group norm on NCHW with per-channel affine; statistics never span the batch.
template <typename T>
Var<T> group_norm(const Var<T>& x, int groups, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// Resolution change on NCHW.
template <typename T> Var<T> maxpool2x(const Var<T>& x);
/// Half-pixel-centre bilinear upsampling by 2 with edge clamping.
template <typename T> Var<T> bilinear_upsample2x(const Var<T>& x);

// Probabilities.
template <typename T> Var<T> softmax_last(const Var<T>& x);
/// Per-pixel softmax over K for (N, K, H, W) logits.
template <typename T> Var<T> softmax_channels(const Var<T>& logits);

// Index maps for common rearrangements.
/// (N, H*W, C) tokens to (N, C, H, W).
IndexMap tokens_to_nchw_index(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c);
/// (N, C, H, W) to (N, H*W, C) tokens.
IndexMap nchw_to_tokens_index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);

} // namespace wmu
