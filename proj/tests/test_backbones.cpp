#include "helpers.hpp"

#include "wmu/backbones.hpp"
#include "wmu/losses.hpp"
#include "wmu/ops.hpp"
#include "wmu/trainer.hpp"

#include <doctest.h>

#include <algorithm>

using namespace wmu;
using testutil::random_tensor;

namespace {

constexpr BackboneKind kKinds[] = {BackboneKind::Cnn, BackboneKind::Attn, BackboneKind::Ssm};

ArchConfig small_arch(BackboneKind kind)
{
    ArchConfig a;
    a.kind = kind;
    a.image_size = 16;
    a.width = 4;
    a.patch = 2;
    a.window = 2;
    a.d_state = 4;
    return a;
}

} // namespace

TEST_CASE("forward shape for every backbone")
{
    for (auto kind : kKinds) {
        auto net = build<float>(kind, 64, 4, 16, 1);
        const auto out = net.forward(Var<float>(random_tensor<float>({2, 1, 64, 64}, 2, 0, 1)));
        CHECK(out.shape() == Shape{2, 4, 64, 64});
        const auto& vals = out.value().values();
        CHECK(std::all_of(vals.begin(), vals.end(), [](float v) { return std::isfinite(v); }));
    }
}

TEST_CASE("same seed gives identical parameters and outputs")
{
    for (auto kind : kKinds) {
        auto a = build<float>(kind, 64, 4, 16, 9);
        auto b = build<float>(kind, 64, 4, 16, 9);
        REQUIRE(a.params().size() == b.params().size());
        for (std::size_t i = 0; i < a.params().size(); ++i) {
            CHECK(a.params()[i].value() == b.params()[i].value());
        }
        const auto x = random_tensor<float>({1, 1, 64, 64}, 3, 0, 1);
        CHECK(a.forward(Var<float>(x)).value() == a.forward(Var<float>(x)).value());
        CHECK(a.forward(Var<float>(x)).value() == b.forward(Var<float>(x)).value());
    }
}

TEST_CASE("parameter counts of the default configuration")
{
    CHECK(build<float>(BackboneKind::Cnn, 64, 4, 16, 0).parameter_count() == 1965332);
    CHECK(build<float>(BackboneKind::Attn, 64, 4, 16, 0).parameter_count() == 752084);
    CHECK(build<float>(BackboneKind::Ssm, 64, 4, 16, 0).parameter_count() == 633492);
}

TEST_CASE("the three kinds disagree on the same input with the same seed")
{
    const auto x = random_tensor<float>({1, 1, 64, 64}, 4, 0, 1);
    std::vector<TensorF> outs;
    for (auto kind : kKinds) {
        outs.push_back(build<float>(kind, 64, 4, 16, 5).forward(Var<float>(x)).value());
    }
    CHECK_FALSE(outs[0] == outs[1]);
    CHECK_FALSE(outs[0] == outs[2]);
    CHECK_FALSE(outs[1] == outs[2]);
}

TEST_CASE("incompatible sizes are rejected")
{
    CHECK_THROWS_AS(build<float>(BackboneKind::Cnn, 40, 4, 16, 0), ConfigError);
    CHECK_THROWS_AS(build<float>(BackboneKind::Attn, 48, 4, 16, 0), ConfigError);
    CHECK_THROWS_AS(build<float>(BackboneKind::Ssm, 16, 4, 16, 0), ConfigError);
    auto net = build<float>(BackboneKind::Cnn, 32, 4, 8, 0);
    CHECK_THROWS_AS(net.forward(Var<float>(TensorF({1, 1, 64, 64}))), ConfigError);
    CHECK_THROWS_AS(parse_backbone("unet"), ConfigError);
    CHECK(parse_backbone("SSM") == BackboneKind::Ssm);
}

TEST_CASE("loss on a fixed batch decreases over 50 SGD steps")
{
    const auto images = random_tensor<float>({2, 1, 32, 32}, 6, 0, 1);
    std::vector<std::uint8_t> labels(2 * 32 * 32);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        // Class from the image intensity so the target is learnable.
        labels[i] = static_cast<std::uint8_t>(std::min(3, static_cast<int>(images[static_cast<std::int64_t>(i)] * 4)));
    }
    for (auto kind : kKinds) {
        ArchConfig a;
        a.kind = kind;
        a.image_size = 32;
        a.width = 8;
        a.patch = 2;
        a.window = 2;
        SegNetwork<float> net(a, 7);
        SgdState sgd;
        double first = 0, last = 0;
        for (int step = 0; step <= 50; ++step) {
            net.zero_grad();
            auto loss = pce_loss(softmax_channels(net.forward(Var<float>(images))), labels);
            const double v = loss.value()[0];
            if (step == 0) {
                first = v;
            }
            last = v;
            if (step == 50) {
                break;
            }
            backward(loss);
            sgd_step(net.params(), sgd, 0.01, 0.9, 1e-4);
        }
        INFO(to_string(kind), " first ", first, " last ", last);
        CHECK(last < first);
    }
}

TEST_CASE("end-to-end gradient check on 16x16 builds at width 4")
{
    for (auto kind : kKinds) {
        SegNetwork<double> net(small_arch(kind), 5);
        auto img = random_leaf({1, 1, 16, 16}, 3, "img", 0, 1);
        auto opts = testutil::grad_opts(2e-3, 4);
        // Tiny steps keep relu crossings out of the probe window.
        opts.step = 1e-6;
        opts.abs_floor = 1e-4;
        const auto r =
            grad_check([&] { return random_projection(softmax_channels(net.forward(img)), 2); }, net.params(), opts);
        INFO(to_string(kind), ": ", r.summary());
        CHECK(r.passed);
    }
}
