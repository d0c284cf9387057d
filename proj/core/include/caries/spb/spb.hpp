#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "caries/autograd/nn.hpp"
#include "caries/detector/backbone.hpp"

namespace caries::spb {

/// Structure perception branch: 3x3 (C_feat -> hidden) relu, 3x3 (hidden ->
/// hidden) relu, 1x1 (hidden -> 1). Padding keeps the spatial size.
class SpbNet {
public:
    SpbNet() = default;
    SpbNet(ag::ParameterStore& store, const std::string& prefix, std::size_t in_channels, std::size_t hidden,
           ag::Rng& rng);

    /// feat [C_feat,h,w] -> raw (pre-sigmoid) structural map [1,h,w].
    ag::Tensor forward(const ag::Tensor& feat) const;

    std::size_t in_channels() const { return in_channels_; }
    std::vector<ag::Tensor> parameters() const;

private:
    std::size_t in_channels_ = 0;
    ag::Conv2d conv1_, conv2_, conv3_;
};

inline ag::Tensor spb_forward(const ag::Tensor& feat, const SpbNet& net) { return net.forward(feat); }

struct PretrainCorpus {
    std::vector<std::filesystem::path> images;
    std::uint64_t shuffle_seed = 0;
};

struct PretrainConfig {
    std::size_t epochs = 20;
    std::size_t batch = 16;
    double lr = 2e-3;
    double weight_decay = 1e-4;
    bool flip = true;  // horizontal-flip augmentation
};

struct PretrainResult {
    /// Entry 0 is the corpus loss before any update; entry e > 0 is the mean
    /// training loss of epoch e.
    std::vector<double> loss_trace;
    std::size_t skipped_images = 0;
    std::size_t steps = 0;
};

/// Structural target at feature resolution: average-pooled T_struct.
std::vector<double> pooled_target(const imgproc::RgbImage& img, std::size_t stride);

/// Mean |sigmoid(spb(feat)) - target| of one image, differentiable w.r.t. the SPB.
ag::Tensor reconstruction_loss(const SpbNet& net, const ag::Tensor& feat, const std::vector<double>& target);

/// Trains `net` on features of the frozen `backbone` against pooled
/// structural targets. Unreadable images are skipped and counted; an empty
/// (or fully unreadable) corpus throws.
PretrainResult pretrain(const PretrainCorpus& corpus, const detector::ToyBackbone& backbone, SpbNet& net,
                        const PretrainConfig& cfg, const std::function<void(std::size_t, double)>& on_epoch = {});

/// Pearson correlation between sigmoid(spb(feat)) and the pooled target,
/// over all pixels of the given images.
double structural_correlation(const std::vector<std::filesystem::path>& images,
                              const detector::ToyBackbone& backbone, const SpbNet& net);

}  // namespace caries::spb
