#pragma once

#include <cstdint>
#include <vector>

namespace wmu {

inline constexpr std::uint8_t kUnlabeled = 255;

/// Per-pixel class map of one H x W image.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    LabelMap() = default;
    LabelMap(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill)
    {
    }

    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }

    bool operator==(const LabelMap&) const = default;
};

/// Dense annotation: every pixel carries a class < K.
struct DenseLabel : LabelMap {
    using LabelMap::LabelMap;
};

/// Sparse annotation: classes < K on scribbled pixels, kUnlabeled elsewhere.
struct ScribbleLabel : LabelMap {
    using LabelMap::LabelMap;
};

} // namespace wmu
