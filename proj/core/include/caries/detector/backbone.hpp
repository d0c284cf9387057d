#pragma once

#include <string>

#include "caries/autograd/nn.hpp"
#include "caries/imgproc/image.hpp"

namespace caries::detector {

/// Three 3x3 stride-2 conv + relu blocks, 3 -> 16 -> 32 -> out_channels.
/// Output stride 8: a 64x64 image gives an [out_channels, 8, 8] map.
struct ToyBackbone {
    static constexpr std::size_t kStride = 8;

    ag::Conv2d conv1, conv2, conv3;
    std::size_t out_channels = 64;

    ToyBackbone() = default;
    ToyBackbone(ag::ParameterStore& store, const std::string& prefix, std::size_t out_channels, ag::Rng& rng);

    ag::Tensor operator()(const ag::Tensor& image) const;
};

/// [3,H,W] tensor scaled to [-1,1].
ag::Tensor image_tensor(const imgproc::RgbImage& img);

}  // namespace caries::detector
