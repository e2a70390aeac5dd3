#include "helpers.hpp"

#include "wmu/blocks.hpp"

#include <doctest.h>

using namespace wmu;
using testutil::random_tensor;

namespace {

template <typename Block>
GradCheckReport check_token_block(ParamStore<double>& store, const Block& block, std::int64_t h, std::int64_t w,
                                  std::int64_t dim, double tol = 1e-4)
{
    auto x = random_leaf({1, h * w, dim}, 77, "x");
    auto leaves = store.params();
    leaves.push_back(x);
    return grad_check([&] { return random_projection(block(x, h, w), 5); }, leaves, testutil::grad_opts(tol));
}

void zero(Projection<float>& p)
{
    p.weight.mutable_value().fill(0.0f);
    if (p.bias.defined()) {
        p.bias.mutable_value().fill(0.0f);
    }
}

} // namespace

TEST_CASE("conv_block: zero input and zero bias give zero output")
{
    ParamStore<float> store(1);
    ConvBlock<float> block(store, "b", 2, 4);
    for (auto p : store.params()) {
        if (p.name().find("bias") != std::string::npos || p.name().find("beta") != std::string::npos) {
            p.mutable_value().fill(0.0f);
        }
    }
    const auto out = block(Var<float>(TensorF({1, 2, 6, 6}))).value();
    for (float v : out.values()) {
        CHECK(v == 0.0f);
    }
}

TEST_CASE("conv_block preserves spatial size")
{
    ParamStore<float> store(2);
    ConvBlock<float> block(store, "b", 1, 3);
    for (std::int64_t h : {3, 5, 8}) {
        const auto out = block(Var<float>(random_tensor<float>({2, 1, h, h + 1}, 3)));
        CHECK(out.shape() == Shape{2, 3, h, h + 1});
    }
}

TEST_CASE("conv_block gradient check on 1x4x8x8")
{
    ParamStore<double> store(3);
    ConvBlock<double> block(store, "b", 4, 4);
    auto x = random_leaf({1, 4, 8, 8}, 4, "x");
    auto leaves = store.params();
    leaves.push_back(x);
    const auto r = grad_check([&] { return random_projection(block(x), 6); }, leaves, testutil::grad_opts());
    INFO(r.summary());
    CHECK(r.passed);
}

TEST_CASE("swin_block_pair preserves shape")
{
    ParamStore<float> store(4);
    BlockConfig cfg{16, 4, 8, 2};
    SwinBlockPair<float> pair(store, "s", cfg);
    const auto out = pair(Var<float>(random_tensor<float>({1, 64, 16}, 5)), 8, 8);
    CHECK(out.shape() == Shape{1, 64, 16});
}

TEST_CASE("swin blocks with zeroed output projections are the identity")
{
    ParamStore<float> store(5);
    BlockConfig cfg{16, 4, 8, 2};
    SwinBlockPair<float> pair(store, "s", cfg);
    const auto x = random_tensor<float>({2, 64, 16}, 6);
    for (int i = 0; i < 2; ++i) {
        zero(pair.block(i).out_proj());
    }
    // Only the MLP residual path remains.
    const auto mlp_only = pair(Var<float>(x), 8, 8).value();
    CHECK_FALSE(mlp_only == x);
    for (int i = 0; i < 2; ++i) {
        zero(pair.block(i).mlp_out());
    }
    CHECK(pair(Var<float>(x), 8, 8).value() == x);
}

TEST_CASE("swin_block_pair rejects a window that does not divide the map")
{
    ParamStore<float> store(6);
    SwinBlockPair<float> pair(store, "s", BlockConfig{8, 3, 4, 1});
    CHECK_THROWS_AS(pair(Var<float>(TensorF({1, 64, 8})), 8, 8), ConfigError);
}

TEST_CASE("swin_block_pair gradient check on 8x8, dim 8, window 4")
{
    ParamStore<double> store(7);
    SwinBlockPair<double> pair(store, "s", BlockConfig{8, 4, 4, 1});
    const auto r = check_token_block(store, pair, 8, 8, 8);
    INFO(r.summary());
    CHECK(r.passed);
}

TEST_CASE("vss_block_pair preserves shape")
{
    ParamStore<float> store(8);
    VssBlockPair<float> pair(store, "v", BlockConfig{16, 4, 8, 2});
    const auto out = pair(Var<float>(random_tensor<float>({1, 64, 16}, 9)), 8, 8);
    CHECK(out.shape() == Shape{1, 64, 16});
}

TEST_CASE("vss blocks with zeroed output projections are the identity")
{
    ParamStore<float> store(9);
    VssBlockPair<float> pair(store, "v", BlockConfig{8, 4, 4, 1});
    const auto x = random_tensor<float>({1, 16, 8}, 10);
    for (int i = 0; i < 2; ++i) {
        zero(pair.block(i).out_proj());
    }
    CHECK(pair(Var<float>(x), 4, 4).value() == x);
}

TEST_CASE("SS2D row scans of a 180-degree symmetric input are reverses of each other")
{
    ParamStore<float> store(10);
    SS2D<float> ss(store, "ss", 6, 4, 1);
    auto& fwd = ss.params(ScanOrder::RowForward);
    auto& bwd = ss.params(ScanOrder::RowBackward);
    bwd.x_proj.weight.mutable_value() = fwd.x_proj.weight.value();
    bwd.dt_proj.weight.mutable_value() = fwd.dt_proj.weight.value();
    bwd.dt_proj.bias.mutable_value() = fwd.dt_proj.bias.value();
    bwd.a_log.mutable_value() = fwd.a_log.value();
    bwd.d_skip.mutable_value() = fwd.d_skip.value();

    const std::int64_t h = 4, w = 5, len = h * w, d = 6;
    auto x = random_tensor<float>({1, len, d}, 11);
    for (std::int64_t p = 0; p < len; ++p) {
        for (std::int64_t c = 0; c < d; ++c) {
            x.at(0, len - 1 - p, c) = x.at(0, p, c);
        }
    }
    const auto yf = ss.scan(Var<float>(x), h, w, ScanOrder::RowForward).value();
    const auto yb = ss.scan(Var<float>(x), h, w, ScanOrder::RowBackward).value();
    for (std::int64_t p = 0; p < len; ++p) {
        for (std::int64_t c = 0; c < d; ++c) {
            CHECK(yb.at(0, p, c) == doctest::Approx(yf.at(0, len - 1 - p, c)).epsilon(1e-6));
        }
    }
}

TEST_CASE("scan orders visit every position once")
{
    for (auto order : {ScanOrder::RowForward, ScanOrder::RowBackward, ScanOrder::ColumnForward, ScanOrder::ColumnBackward}) {
        auto pos = scan_positions(order, 3, 4);
        std::sort(pos.begin(), pos.end());
        for (std::int64_t i = 0; i < 12; ++i) {
            CHECK(pos[static_cast<std::size_t>(i)] == i);
        }
    }
    const auto col = scan_positions(ScanOrder::ColumnForward, 3, 4);
    CHECK(col[0] == 0);
    CHECK(col[1] == 4);
    CHECK(col[2] == 8);
    CHECK(col[3] == 1);
}

TEST_CASE("vss_block_pair gradient check on 4x4, dim 8, d_state 4")
{
    ParamStore<double> store(11);
    VssBlockPair<double> pair(store, "v", BlockConfig{8, 4, 4, 1});
    const auto r = check_token_block(store, pair, 4, 4, 8);
    INFO(r.summary());
    CHECK(r.passed);
}

TEST_CASE("patch_embed shapes and symmetry")
{
    ParamStore<float> store(12);
    PatchEmbed<float> embed(store, "e", 4, 16);
    CHECK(embed(Var<float>(random_tensor<float>({2, 1, 64, 64}, 13))).shape() == Shape{2, 256, 16});
    const auto tokens = embed(Var<float>(TensorF({1, 1, 16, 16}, 0.4f))).value();
    for (std::int64_t t = 1; t < 16; ++t) {
        for (std::int64_t c = 0; c < 16; ++c) {
            CHECK(tokens.at(0, t, c) == tokens.at(0, 0, c));
        }
    }
    CHECK_THROWS_AS(embed(Var<float>(TensorF({1, 1, 10, 16}))), ConfigError);
}

TEST_CASE("patch_embed gradient check")
{
    ParamStore<double> store(13);
    PatchEmbed<double> embed(store, "e", 2, 6);
    auto img = random_leaf({2, 1, 4, 6}, 14, "image");
    auto leaves = store.params();
    leaves.push_back(img);
    const auto r = grad_check([&] { return random_projection(embed(img), 3); }, leaves, testutil::grad_opts());
    INFO(r.summary());
    CHECK(r.passed);
}

TEST_CASE("patch_merge and patch_expand shapes")
{
    ParamStore<float> store(14);
    PatchMerge<float> merge(store, "m", 16);
    PatchExpand<float> expand(store, "x", 32, 2, 16);
    const auto merged = merge(Var<float>(random_tensor<float>({1, 64, 16}, 15)), 8, 8);
    CHECK(merged.shape() == Shape{1, 16, 32});
    CHECK(expand(merged, 4, 4).shape() == Shape{1, 64, 16});
    CHECK_THROWS_AS(merge(Var<float>(TensorF({1, 15, 16})), 3, 5), ConfigError);
    CHECK_THROWS_AS(expand(Var<float>(TensorF({1, 16, 16})), 4, 4), ConfigError);
}

TEST_CASE("merge gathers the 2x2 neighbourhood in (0,0), (1,0), (0,1), (1,1) order")
{
    const auto idx = merge_index(1, 2, 2, 1);
    // Output token 0 holds input positions 0 (0,0), 2 (1,0), 1 (0,1), 3 (1,1).
    REQUIRE(idx->size() == 4);
    CHECK((*idx)[0] == 0);
    CHECK((*idx)[1] == 2);
    CHECK((*idx)[2] == 1);
    CHECK((*idx)[3] == 3);
}

TEST_CASE("patch_merge and patch_expand gradient checks")
{
    for (std::int64_t s : {2, 4}) {
        ParamStore<double> store(15 + s);
        PatchMerge<double> merge(store, "m", 4);
        PatchExpand<double> expand(store, "x", 4, 2, 4);
        auto x = random_leaf({1, s * s, 4}, 16, "x");
        auto leaves = store.params();
        // O(1) weights keep the layer norms away from near-zero variance.
        for (std::size_t i = 0; i < leaves.size(); ++i) {
            leaves[i].mutable_value() = random_tensor<double>(leaves[i].shape(), 40 + i);
        }
        leaves.push_back(x);
        const auto rm = grad_check([&] { return random_projection(merge(x, s, s), 1); }, leaves, testutil::grad_opts());
        INFO(rm.summary());
        CHECK(rm.passed);
        const auto re = grad_check([&] { return random_projection(expand(x, s, s), 1); }, leaves, testutil::grad_opts());
        INFO(re.summary());
        CHECK(re.passed);
    }
}

TEST_CASE("parameter names are unique within a store")
{
    ParamStore<float> store(16);
    store.constant("a", {2}, 0.0f);
    CHECK_THROWS_AS(store.constant("a", {2}, 0.0f), ConfigError);
}
