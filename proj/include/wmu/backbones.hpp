#pragma once

#include "wmu/blocks.hpp"

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace wmu {

enum class BackboneKind { Cnn, Attn, Ssm };

std::string to_string(BackboneKind kind);
/// Accepts "cnn", "attn", "ssm" (case-insensitive). Throws ConfigError otherwise.
BackboneKind parse_backbone(std::string_view name);

struct ArchConfig {
    BackboneKind kind = BackboneKind::Cnn;
    int image_size = 64;
    int num_classes = 4;
    /// CNN: stem channels (doubling over 4 levels). Token nets: embedding dim (doubling over 3 levels).
    int width = 16;
    int patch = 4;
    int window = 4;
    int d_state = 8;
};

/// Throws ConfigError with the offending divisibility requirement.
void validate(const ArchConfig& cfg);

namespace detail {
template <typename T>
class SegModel;
}

/// A segmentation network: (N, 1, S, S) image batch in, (N, K, S, S) logits out.
template <typename T>
class SegNetwork {
public:
    SegNetwork(const ArchConfig& cfg, std::uint64_t seed);
    ~SegNetwork();
    SegNetwork(SegNetwork&&) noexcept;
    SegNetwork& operator=(SegNetwork&&) noexcept;

    Var<T> forward(const Var<T>& images) const;

    const ArchConfig& config() const { return cfg_; }
    BackboneKind kind() const { return cfg_.kind; }
    const std::vector<Var<T>>& params() const;
    std::int64_t parameter_count() const;
    void zero_grad();
    /// Looks a parameter up by name; throws ConfigError when absent.
    Var<T> param(const std::string& name) const;

private:
    ArchConfig cfg_;
    std::unique_ptr<detail::SegModel<T>> model_;
};

template <typename T>
SegNetwork<T> build(BackboneKind kind, int image_size, int num_classes, int width, std::uint64_t seed);

extern template class SegNetwork<float>;
extern template class SegNetwork<double>;

} // namespace wmu
