#pragma once

#include "wmu/attention.hpp"
#include "wmu/random.hpp"
#include "wmu/ssm.hpp"

#include <array>
#include <string>
#include <vector>

namespace wmu {

/// Owns the named parameters of one network and draws their initial values.
template <typename T>
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

    /// Registers a parameter; names must be unique within the store.
    Var<T> create(const std::string& name, Tensor<T> init);
    /// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)).
    Var<T> he_uniform(const std::string& name, Shape shape, std::int64_t fan_in);
    Var<T> uniform(const std::string& name, Shape shape, double lo, double hi);
    Var<T> constant(const std::string& name, Shape shape, T value);

    const std::vector<Var<T>>& params() const { return params_; }
    Rng& rng() { return rng_; }

private:
    Rng rng_;
    std::vector<Var<T>> params_;
};

template <typename T>
Projection<T> make_linear(ParamStore<T>& store, const std::string& name, std::int64_t in, std::int64_t out,
                          bool bias = true);

template <typename T>
struct Norm {
    Var<T> gamma;
    Var<T> beta;
};

template <typename T>
Norm<T> make_norm(ParamStore<T>& store, const std::string& name, std::int64_t dim);

/// Hyperparameters shared by the token blocks.
struct BlockConfig {
    std::int64_t dim = 16;
    int window = 4;
    int d_state = 8;
    int heads = 2;
};

/// Two (conv 3x3 pad 1 -> group norm -> ReLU) stages.
template <typename T>
class ConvBlock {
public:
    ConvBlock(ParamStore<T>& store, const std::string& name, std::int64_t in_ch, std::int64_t out_ch);
    Var<T> operator()(const Var<T>& x) const;

    static int groups_for(std::int64_t channels);

private:
    Var<T> w1_, b1_, w2_, b2_;
    Norm<T> n1_, n2_;
    int groups_;
};

/// One pre-norm transformer block over window attention; `shift` > 0 rolls
/// the map cyclically by -shift before partitioning (no attention mask).
template <typename T>
class SwinBlock {
public:
    SwinBlock(ParamStore<T>& store, const std::string& name, const BlockConfig& cfg, int shift);
    /// x: (N, H*W, dim).
    Var<T> operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const;

    Projection<T>& out_proj() { return o_; }
    Projection<T>& mlp_out() { return fc2_; }

private:
    BlockConfig cfg_;
    int shift_;
    Norm<T> norm1_, norm2_;
    Projection<T> q_, k_, v_, o_, fc1_, fc2_;
};

/// Regular block followed by a block with windows shifted by window/2.
template <typename T>
class SwinBlockPair {
public:
    SwinBlockPair(ParamStore<T>& store, const std::string& name, const BlockConfig& cfg);
    Var<T> operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const;

    SwinBlock<T>& block(int i) { return blocks_[static_cast<std::size_t>(i)]; }

private:
    std::vector<SwinBlock<T>> blocks_;
};

/// Token order of one 2D scan over an H x W map: entry t is the row-major
/// position visited at step t.
enum class ScanOrder { RowForward, RowBackward, ColumnForward, ColumnBackward };
std::vector<std::int64_t> scan_positions(ScanOrder order, std::int64_t h, std::int64_t w);

/// Parameters of the selective scan for one direction.
template <typename T>
struct ScanParams {
    Projection<T> x_proj;  // d_inner -> dt_rank + 2 * d_state, no bias
    Projection<T> dt_proj; // dt_rank -> d_inner
    Var<T> a_log;          // (d_inner, d_state); A = -exp(a_log)
    Var<T> d_skip;         // (d_inner)
};

/// Four-direction selective scan over a (N, H*W, d_inner) feature map.
template <typename T>
class SS2D {
public:
    SS2D(ParamStore<T>& store, const std::string& name, std::int64_t d_inner, int d_state, int dt_rank);

    /// Output of one direction, mapped back to row-major token order.
    Var<T> scan(const Var<T>& x, std::int64_t h, std::int64_t w, ScanOrder order) const;
    /// Sum of the four directional outputs.
    Var<T> operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const;

    ScanParams<T>& params(ScanOrder order) { return dirs_[static_cast<std::size_t>(order)]; }

private:
    std::int64_t d_inner_;
    int d_state_, dt_rank_;
    std::array<ScanParams<T>, 4> dirs_;
};

/// norm -> in_proj -> depthwise 3x3 -> SiLU -> SS2D -> SiLU gate -> out_proj -> residual.
template <typename T>
class VssBlock {
public:
    VssBlock(ParamStore<T>& store, const std::string& name, const BlockConfig& cfg);
    Var<T> operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const;

    Projection<T>& out_proj() { return out_proj_; }
    SS2D<T>& ss2d() { return ss2d_; }

private:
    std::int64_t dim_, d_inner_;
    Norm<T> norm_;
    Projection<T> in_proj_, out_proj_;
    Var<T> dw_weight_, dw_bias_;
    SS2D<T> ss2d_;
};

template <typename T>
class VssBlockPair {
public:
    VssBlockPair(ParamStore<T>& store, const std::string& name, const BlockConfig& cfg);
    Var<T> operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const;

    VssBlock<T>& block(int i) { return blocks_[static_cast<std::size_t>(i)]; }

private:
    std::vector<VssBlock<T>> blocks_;
};

/// Non-overlapping patch flattening, linear projection and layer norm:
/// (N, 1, H, W) -> (N, (H/patch)*(W/patch), dim).
template <typename T>
class PatchEmbed {
public:
    PatchEmbed(ParamStore<T>& store, const std::string& name, int patch, std::int64_t dim);
    Var<T> operator()(const Var<T>& image) const;

private:
    int patch_;
    std::int64_t dim_;
    Projection<T> proj_;
    Norm<T> norm_;
};

/// Concatenate each 2x2 neighbourhood and reduce 4*dim -> 2*dim.
template <typename T>
class PatchMerge {
public:
    PatchMerge(ParamStore<T>& store, const std::string& name, std::int64_t dim);
    Var<T> operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const;

private:
    std::int64_t dim_;
    Norm<T> norm_;
    Projection<T> reduce_;
};

/// Linear dim -> factor^2 * out_dim, then each token unfolds into a
/// factor x factor block of out_dim-wide tokens.
template <typename T>
class PatchExpand {
public:
    PatchExpand(ParamStore<T>& store, const std::string& name, std::int64_t dim, int factor, std::int64_t out_dim);
    Var<T> operator()(const Var<T>& x, std::int64_t h, std::int64_t w) const;

private:
    std::int64_t dim_, out_dim_;
    int factor_;
    Projection<T> expand_;
    Norm<T> norm_;
};

// Index maps used by the blocks, exposed for tests.
/// Cyclic shift by -shift then window partition: (N, H*W, C) -> (N*nw, win*win, C).
IndexMap window_partition_index(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c, int window,
                                int shift);
/// (N, H*W, C) -> (N, H/2*W/2, 4C), neighbourhood order (0,0), (1,0), (0,1), (1,1).
IndexMap merge_index(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c);
/// (N, H*W, f*f*C) -> (N, fH*fW, C).
IndexMap expand_index(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c, int factor);
IndexMap inverse_index(const std::vector<std::int64_t>& perm);

} // namespace wmu
