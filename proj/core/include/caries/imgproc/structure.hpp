#pragma once

#include "caries/imgproc/image.hpp"

namespace caries::imgproc {

/// Luma (0.299 R + 0.587 G + 0.114 B) / 255.
GrayMap to_grayscale(const RgbImage& img);

/// Gradient magnitude sqrt((g*Kx)^2 + (g*Ky)^2) with the integer Scharr pair
///   Kx = [[-3,0,3],[-10,0,10],[-3,0,3]],  Ky = Kx^T
/// applied as cross-correlation with replicate borders. Output has the input size.
GradientMap scharr_magnitude(const GrayMap& gray);

/// t = log(1 + G), min-max normalized to [0,1]. A flat t maps to all zeros.
StructTarget make_struct_target(const GradientMap& grad);

/// to_grayscale -> scharr_magnitude -> make_struct_target.
StructTarget struct_target_of(const RgbImage& img);

/// Non-overlapping mean pooling by `factor` in both directions.
template <class Tag>
Map<Tag> downsample_avg(const Map<Tag>& m, std::size_t factor) {
    if (factor == 0 || m.height % factor != 0 || m.width % factor != 0) {
        throw ShapeError("downsample_avg: " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                         " not divisible by " + std::to_string(factor));
    }
    Map<Tag> out(m.height / factor, m.width / factor);
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) {
            double s = 0.0;
            for (std::size_t dy = 0; dy < factor; ++dy)
                for (std::size_t dx = 0; dx < factor; ++dx) s += m(y * factor + dy, x * factor + dx);
            out(y, x) = s * inv;
        }
    return out;
}

}  // namespace caries::imgproc
