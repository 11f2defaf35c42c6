#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mspa {

// Row-major H x W map of discrete values (masks, votes, class indices).
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(int h, int w, T fill = T{})
        : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

    std::size_t size() const { return values.size(); }
    T& at(int h, int w) { return values[static_cast<std::size_t>(h) * width + w]; }
    const T& at(int h, int w) const { return values[static_cast<std::size_t>(h) * width + w]; }
    T& operator[](std::size_t i) { return values[i]; }
    const T& operator[](std::size_t i) const { return values[i]; }

    bool same_shape(const Grid& other) const { return height == other.height && width == other.width; }
    bool operator==(const Grid&) const = default;
};

using BinaryMask = Grid<std::uint8_t>;
using LabelMap = Grid<std::int32_t>;

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                    std::to_string(b.width) + ")");
    }
}

}  // namespace mspa
