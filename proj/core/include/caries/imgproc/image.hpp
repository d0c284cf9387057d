#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "caries/error.hpp"

namespace caries::imgproc {

/// 8-bit RGB, row-major, interleaved.
struct RgbImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;  // 3*H*W

    RgbImage() = default;
    RgbImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(3 * h * w, 0) {}

    bool empty() const { return height == 0 || width == 0; }
    std::uint8_t* at(std::size_t y, std::size_t x) { return pixels.data() + 3 * (y * width + x); }
    const std::uint8_t* at(std::size_t y, std::size_t x) const { return pixels.data() + 3 * (y * width + x); }
};

/// Single-channel float map. The tag keeps grayscale, gradient, and target
/// maps from being mixed up at call sites.
template <class Tag>
struct Map {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    Map() = default;
    Map(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

    double& operator()(std::size_t y, std::size_t x) { return values[y * width + x]; }
    double operator()(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    std::size_t size() const { return values.size(); }
};

struct GrayTag {};
struct GradientTag {};
struct StructTag {};

using GrayMap = Map<GrayTag>;          // luma in [0,1]
using GradientMap = Map<GradientTag>;  // nonnegative gradient magnitude
using StructTarget = Map<StructTag>;   // normalized structural target in [0,1]

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& img);
/// Writes values in [0,1] as 8-bit gray (value*255, rounded, clamped).
void write_png_gray(const std::filesystem::path& path, std::size_t height, std::size_t width,
                    const std::vector<double>& values);

RgbImage flip_horizontal(const RgbImage& img);

}  // namespace caries::imgproc
