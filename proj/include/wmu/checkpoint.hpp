#pragma once

#include "wmu/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace wmu {

struct NamedTensor {
    std::string name;
    TensorF value;

    bool operator==(const NamedTensor&) const = default;
};

/// WMUC container: "WMUC", u16 version, u32 count, then per tensor
/// u16 name length + UTF-8 name, u8 rank, u32 dims, f32 payload.
/// All integers and floats little-endian.
inline constexpr std::uint16_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

std::vector<unsigned char> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<unsigned char>& bytes);

} // namespace wmu
