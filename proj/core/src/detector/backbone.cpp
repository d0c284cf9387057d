#include "caries/detector/backbone.hpp"

#include <cmath>

namespace caries::detector {

namespace {

// He-uniform scaling. The backbone stays frozen at its random init during
// pretraining, so activations must not shrink layer over layer.
void he_rescale(ag::Conv2d& conv) {
    for (auto& w : conv.weight.mutable_data()) w *= std::sqrt(6.0);
}

}  // namespace

ToyBackbone::ToyBackbone(ag::ParameterStore& store, const std::string& prefix, std::size_t out, ag::Rng& rng)
    : conv1(store, prefix + ".conv1", 3, 16, 3, 2, 1, rng),
      conv2(store, prefix + ".conv2", 16, 32, 3, 2, 1, rng),
      conv3(store, prefix + ".conv3", 32, out, 3, 2, 1, rng),
      out_channels(out) {
    he_rescale(conv1);
    he_rescale(conv2);
    he_rescale(conv3);
}

ag::Tensor ToyBackbone::operator()(const ag::Tensor& image) const {
    return ag::relu(conv3(ag::relu(conv2(ag::relu(conv1(image))))));
}

ag::Tensor image_tensor(const imgproc::RgbImage& img) {
    const std::size_t hw = img.height * img.width;
    std::vector<double> v(3 * hw);
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < 3; ++c) v[c * hw + i] = img.pixels[3 * i + c] / 127.5 - 1.0;
    return ag::Tensor::from({3, img.height, img.width}, std::move(v));
}

}  // namespace caries::detector
