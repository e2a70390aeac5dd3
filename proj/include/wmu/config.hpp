#pragma once

#include "wmu/backbones.hpp"
#include "wmu/losses.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace wmu {

struct TrainConfig {
    int iterations = 2000;
    int batch_size = 4;
    double lr0 = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int val_every = 200;
    std::uint64_t seed = 0;
    std::vector<BackboneKind> backbones{BackboneKind::Cnn, BackboneKind::Attn, BackboneKind::Ssm};
    int image_size = 64;
    int width = 16;
    double coverage = 0.5;
    double lr_decay_power = 0.9;
    LossNorm loss_norm = LossNorm::Mean;
    int num_classes = 4;
    int patch = 4;
    int window = 4;
    int d_state = 8;
    /// Random horizontal flip and 90-degree rotations of training batches.
    bool augment = false;

    /// Throws ConfigError on any violated invariant.
    void validate() const;
    ArchConfig arch(BackboneKind kind) const;
    /// Flat `key = value` lines, one per field, in a fixed order.
    std::string to_text() const;
};

/// Parses a flat TOML table: `key = value` lines with integers, floats,
/// booleans, quoted strings and `#` comments. No sections or arrays except a
/// string array for `backbones`.
std::map<std::string, std::string> parse_flat_toml(std::string_view text);

/// Applies parsed keys onto `cfg`; unknown keys or malformed values throw ConfigError.
void apply_settings(TrainConfig& cfg, const std::map<std::string, std::string>& kv);

TrainConfig load_config(const std::filesystem::path& path);

/// "cnn,attn,ssm" style list (1 or 3 entries for training).
std::vector<BackboneKind> parse_backbone_list(std::string_view text);
std::string backbone_list(const std::vector<BackboneKind>& kinds);

std::string to_string(LossNorm norm);
LossNorm parse_loss_norm(std::string_view text);

} // namespace wmu
