#include "caries/imgproc/structure.hpp"

#include <algorithm>
#include <cmath>

#include "caries/autograd/ops.hpp"

namespace caries::imgproc {

GrayMap to_grayscale(const RgbImage& img) {
    if (img.empty()) throw ShapeError("to_grayscale: zero-sized image");
    if (img.pixels.size() != 3 * img.height * img.width) {
        throw ShapeError("to_grayscale: pixel buffer does not match " + std::to_string(img.height) + "x" +
                         std::to_string(img.width));
    }
    GrayMap g(img.height, img.width);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const std::uint8_t* p = img.pixels.data() + 3 * i;
        g.values[i] = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
    }
    return g;
}

GradientMap scharr_magnitude(const GrayMap& gray) {
    if (gray.height < 3 || gray.width < 3) {
        throw ShapeError("scharr_magnitude: image " + std::to_string(gray.height) + "x" + std::to_string(gray.width) +
                         " smaller than the 3x3 kernel");
    }
    ag::NoGradGuard no_grad;
    // Both kernels in one [2,1,3,3] weight: channel 0 = Kx, channel 1 = Ky.
    const ag::Tensor kernels = ag::Tensor::from({2, 1, 3, 3}, {-3, 0, 3, -10, 0, 10, -3, 0, 3,  //
                                                               -3, -10, -3, 0, 0, 0, 3, 10, 3});
    const ag::Tensor input = ag::Tensor::from({1, gray.height, gray.width}, gray.values);
    const ag::Tensor resp = ag::conv2d(input, kernels, 1, 1, ag::PadMode::Replicate);
    const auto d = resp.data();
    const std::size_t n = gray.size();
    GradientMap out(gray.height, gray.width);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = std::sqrt(d[i] * d[i] + d[n + i] * d[n + i]);
    return out;
}

StructTarget make_struct_target(const GradientMap& grad) {
    StructTarget out(grad.height, grad.width);
    if (grad.size() == 0) return out;
    std::vector<double> t(grad.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::log1p(grad.values[i]);
    const auto [lo, hi] = std::minmax_element(t.begin(), t.end());
    const double mn = *lo, mx = *hi;
    if (!(mx > mn)) return out;
    // Division, not multiplication by a reciprocal, so the maximum lands on exactly 1.
    for (std::size_t i = 0; i < t.size(); ++i) out.values[i] = (t[i] - mn) / (mx - mn);
    return out;
}

StructTarget struct_target_of(const RgbImage& img) { return make_struct_target(scharr_magnitude(to_grayscale(img))); }

}  // namespace caries::imgproc
