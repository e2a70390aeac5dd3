#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace wmu {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seed for a named item (sample id, parameter name), stable across runs.
inline std::uint64_t hash_seed(std::uint64_t seed, std::string_view id)
{
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a
    for (unsigned char ch : id) {
        h = (h ^ ch) * 1099511628211ULL;
    }
    return mix_seed(seed, h);
}

} // namespace wmu
