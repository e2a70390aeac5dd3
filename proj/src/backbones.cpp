#include "wmu/backbones.hpp"

#include <algorithm>
#include <cctype>

namespace wmu {

std::string to_string(BackboneKind kind)
{
    switch (kind) {
    case BackboneKind::Cnn:
        return "cnn";
    case BackboneKind::Attn:
        return "attn";
    case BackboneKind::Ssm:
        return "ssm";
    }
    return "?";
}

BackboneKind parse_backbone(std::string_view name)
{
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "cnn") {
        return BackboneKind::Cnn;
    }
    if (lower == "attn") {
        return BackboneKind::Attn;
    }
    if (lower == "ssm") {
        return BackboneKind::Ssm;
    }
    throw ConfigError("unknown backbone '" + std::string(name) + "' (expected cnn, attn or ssm)");
}

namespace {

constexpr int kCnnLevels = 4;
constexpr int kTokenLevels = 3;

int heads_for(std::int64_t dim)
{
    return dim % 8 == 0 ? static_cast<int>(dim / 8) : 1;
}

} // namespace

void validate(const ArchConfig& cfg)
{
    const auto s = std::to_string(cfg.image_size);
    if (cfg.num_classes < 2) {
        throw ConfigError("num_classes must be at least 2");
    }
    if (cfg.width < 1) {
        throw ConfigError("width must be positive");
    }
    if (cfg.kind == BackboneKind::Cnn) {
        if (cfg.image_size < 16 || cfg.image_size % 16 != 0) {
            throw ConfigError("image_size " + s + " must be a positive multiple of 16 (2^4) for the " +
                              std::to_string(kCnnLevels) + "-level CNN");
        }
        return;
    }
    if (cfg.patch < 2) {
        throw ConfigError("patch must be at least 2 for token backbones");
    }
    const int unit = cfg.patch * (1 << kTokenLevels);
    if (cfg.image_size < unit || cfg.image_size % unit != 0) {
        throw ConfigError("image_size " + s + " must be divisible by patch*2^3 = " + std::to_string(unit) +
                          " for " + to_string(cfg.kind) + " backbones");
    }
    if (cfg.window < 1 || cfg.d_state < 1) {
        throw ConfigError("window and d_state must be positive");
    }
    if (cfg.kind == BackboneKind::Attn) {
        for (int level = 0; level <= kTokenLevels; ++level) {
            const int res = cfg.image_size / cfg.patch >> level;
            const int win = std::min(cfg.window, res);
            if (res % win != 0) {
                throw ConfigError("window " + std::to_string(cfg.window) + " does not divide the " +
                                  std::to_string(res) + "x" + std::to_string(res) + " token map at level " +
                                  std::to_string(level));
            }
        }
    }
}

namespace detail {

template <typename T>
class SegModel {
public:
    explicit SegModel(std::uint64_t seed) : store(seed) {}
    virtual ~SegModel() = default;
    virtual Var<T> forward(const Var<T>& images) const = 0;

    ParamStore<T> store;
};

// UNet: stem block, 4 x (max-pool, block), 4 x (upsample, concat skip, block), 1x1 head.
template <typename T>
class UNet final : public SegModel<T> {
public:
    UNet(const ArchConfig& cfg, std::uint64_t seed) : SegModel<T>(seed)
    {
        auto& st = this->store;
        const std::int64_t w = cfg.width;
        encoders_.emplace_back(st, "enc0", 1, w);
        for (int i = 1; i <= kCnnLevels; ++i) {
            encoders_.emplace_back(st, "enc" + std::to_string(i), w << (i - 1), w << i);
        }
        for (int i = kCnnLevels - 1; i >= 0; --i) {
            decoders_.emplace_back(st, "dec" + std::to_string(i), (w << (i + 1)) + (w << i), w << i);
        }
        head_w_ = st.he_uniform("head.weight", {cfg.num_classes, w, 1, 1}, w);
        head_b_ = st.constant("head.bias", {cfg.num_classes}, T(0));
    }

    Var<T> forward(const Var<T>& images) const override
    {
        std::vector<Var<T>> skips;
        auto x = encoders_[0](images);
        for (int i = 1; i <= kCnnLevels; ++i) {
            skips.push_back(x);
            x = encoders_[static_cast<std::size_t>(i)](maxpool2x(x));
        }
        for (int i = 0; i < kCnnLevels; ++i) {
            const auto& skip = skips[static_cast<std::size_t>(kCnnLevels - 1 - i)];
            x = decoders_[static_cast<std::size_t>(i)](concat_channels(bilinear_upsample2x(x), skip));
        }
        return conv2d(x, head_w_, head_b_, 1, 0);
    }

private:
    std::vector<ConvBlock<T>> encoders_;
    std::vector<ConvBlock<T>> decoders_;
    Var<T> head_w_, head_b_;
};

// Symmetric token U-shape shared by the attention and state-space nets:
// patch_embed, 3 x (pair, merge), bottleneck pair, 3 x (expand, add skip, pair),
// final patch-sized expand, norm, linear head.
template <typename T, typename Pair>
class TokenUNet final : public SegModel<T> {
public:
    TokenUNet(const ArchConfig& cfg, std::uint64_t seed)
        : SegModel<T>(seed), cfg_(cfg), base_res_(cfg.image_size / cfg.patch)
    {
        auto& st = this->store;
        const std::int64_t w = cfg.width;
        embed_.emplace_back(st, "embed", cfg.patch, w);
        for (int i = 0; i < kTokenLevels; ++i) {
            encoders_.emplace_back(st, "enc" + std::to_string(i), block_config(i));
            merges_.emplace_back(st, "merge" + std::to_string(i), w << i);
        }
        bottleneck_.emplace_back(st, "bottleneck", block_config(kTokenLevels));
        for (int i = kTokenLevels - 1; i >= 0; --i) {
            expands_.emplace_back(st, "expand" + std::to_string(i), w << (i + 1), 2, w << i);
            decoders_.emplace_back(st, "dec" + std::to_string(i), block_config(i));
        }
        final_expand_.emplace_back(st, "final_expand", w, cfg.patch, w);
        final_norm_ = make_norm(st, "final_norm", w);
        head_ = make_linear(st, "head", w, cfg.num_classes);
    }

    Var<T> forward(const Var<T>& images) const override
    {
        const std::int64_t n = images.dim(0);
        std::vector<Var<T>> skips;
        auto x = embed_[0](images);
        std::int64_t res = base_res_;
        for (int i = 0; i < kTokenLevels; ++i) {
            x = encoders_[static_cast<std::size_t>(i)](x, res, res);
            skips.push_back(x);
            x = merges_[static_cast<std::size_t>(i)](x, res, res);
            res /= 2;
        }
        x = bottleneck_[0](x, res, res);
        for (int i = 0; i < kTokenLevels; ++i) {
            x = expands_[static_cast<std::size_t>(i)](x, res, res);
            res *= 2;
            x = add(x, skips[static_cast<std::size_t>(kTokenLevels - 1 - i)]);
            x = decoders_[static_cast<std::size_t>(i)](x, res, res);
        }
        x = final_expand_[0](x, res, res);
        x = layer_norm(x, final_norm_.gamma, final_norm_.beta);
        auto logits = head_(x);
        const std::int64_t s = cfg_.image_size, k = cfg_.num_classes;
        return gather(logits, tokens_to_nchw_index(n, s, s, k), Shape{n, k, s, s});
    }

private:
    BlockConfig block_config(int level) const
    {
        BlockConfig bc;
        bc.dim = std::int64_t{cfg_.width} << level;
        bc.window = std::min(cfg_.window, base_res_ >> level);
        bc.d_state = cfg_.d_state;
        bc.heads = heads_for(bc.dim);
        return bc;
    }

    ArchConfig cfg_;
    int base_res_;
    // Single-element vectors hold members that are not default-constructible.
    std::vector<PatchEmbed<T>> embed_;
    std::vector<Pair> encoders_, bottleneck_, decoders_;
    std::vector<PatchMerge<T>> merges_;
    std::vector<PatchExpand<T>> expands_, final_expand_;
    Norm<T> final_norm_;
    Projection<T> head_;
};

} // namespace detail

template <typename T>
SegNetwork<T>::SegNetwork(const ArchConfig& cfg, std::uint64_t seed) : cfg_(cfg)
{
    validate(cfg);
    switch (cfg.kind) {
    case BackboneKind::Cnn:
        model_ = std::make_unique<detail::UNet<T>>(cfg, seed);
        break;
    case BackboneKind::Attn:
        model_ = std::make_unique<detail::TokenUNet<T, SwinBlockPair<T>>>(cfg, seed);
        break;
    case BackboneKind::Ssm:
        model_ = std::make_unique<detail::TokenUNet<T, VssBlockPair<T>>>(cfg, seed);
        break;
    }
}

template <typename T>
SegNetwork<T>::~SegNetwork() = default;
template <typename T>
SegNetwork<T>::SegNetwork(SegNetwork&&) noexcept = default;
template <typename T>
SegNetwork<T>& SegNetwork<T>::operator=(SegNetwork&&) noexcept = default;

template <typename T>
Var<T> SegNetwork<T>::forward(const Var<T>& images) const
{
    const auto& s = images.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != cfg_.image_size || s[3] != cfg_.image_size) {
        throw ConfigError("network built for (N, 1, " + std::to_string(cfg_.image_size) + ", " +
                          std::to_string(cfg_.image_size) + ") input, got " + shape_str(s));
    }
    return model_->forward(images);
}

template <typename T>
const std::vector<Var<T>>& SegNetwork<T>::params() const
{
    return model_->store.params();
}

template <typename T>
std::int64_t SegNetwork<T>::parameter_count() const
{
    std::int64_t n = 0;
    for (const auto& p : params()) {
        n += p.value().numel();
    }
    return n;
}

template <typename T>
void SegNetwork<T>::zero_grad()
{
    for (auto p : params()) {
        p.zero_grad();
    }
}

template <typename T>
Var<T> SegNetwork<T>::param(const std::string& name) const
{
    for (const auto& p : params()) {
        if (p.name() == name) {
            return p;
        }
    }
    throw ConfigError("no parameter named '" + name + "'");
}

template <typename T>
SegNetwork<T> build(BackboneKind kind, int image_size, int num_classes, int width, std::uint64_t seed)
{
    ArchConfig cfg;
    cfg.kind = kind;
    cfg.image_size = image_size;
    cfg.num_classes = num_classes;
    cfg.width = width;
    return SegNetwork<T>(cfg, seed);
}

template class SegNetwork<float>;
template class SegNetwork<double>;
template SegNetwork<float> build(BackboneKind, int, int, int, std::uint64_t);
template SegNetwork<double> build(BackboneKind, int, int, int, std::uint64_t);

} // namespace wmu
