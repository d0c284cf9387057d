#include "caries/spb/spb.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "caries/imgproc/structure.hpp"

namespace caries::spb {

SpbNet::SpbNet(ag::ParameterStore& store, const std::string& prefix, std::size_t in_channels, std::size_t hidden,
               ag::Rng& rng)
    : in_channels_(in_channels),
      conv1_(store, prefix + ".conv1", in_channels, hidden, 3, 1, 1, rng),
      conv2_(store, prefix + ".conv2", hidden, hidden, 3, 1, 1, rng),
      conv3_(store, prefix + ".conv3", hidden, 1, 1, 1, 0, rng) {}

ag::Tensor SpbNet::forward(const ag::Tensor& feat) const {
    if (feat.rank() != 3 || feat.dim(0) != in_channels_) {
        throw ShapeError("spb_forward: expected [" + std::to_string(in_channels_) + ",h,w] features, got " +
                         ag::shape_str(feat.shape()));
    }
    return conv3_(ag::relu(conv2_(ag::relu(conv1_(feat)))));
}

std::vector<ag::Tensor> SpbNet::parameters() const {
    return {conv1_.weight, conv1_.bias, conv2_.weight, conv2_.bias, conv3_.weight, conv3_.bias};
}

std::vector<double> pooled_target(const imgproc::RgbImage& img, std::size_t stride) {
    return imgproc::downsample_avg(imgproc::struct_target_of(img), stride).values;
}

ag::Tensor reconstruction_loss(const SpbNet& net, const ag::Tensor& feat, const std::vector<double>& target) {
    const ag::Tensor pred = ag::sigmoid(net.forward(feat));
    if (pred.numel() != target.size()) throw ShapeError("reconstruction_loss: target size mismatch");
    const ag::Tensor t = ag::Tensor::from(pred.shape(), target);
    return ag::mean(ag::abs(pred - t));
}

namespace {

struct Example {
    ag::Tensor feat;
    std::vector<double> target;
};

// Backbone features and pooled targets of each readable image, plus the
// flipped copy when requested. The backbone is frozen, so this is computed once.
std::vector<std::array<Example, 2>> build_cache(const std::vector<std::filesystem::path>& images,
                                                const detector::ToyBackbone& backbone, bool with_flip,
                                                std::size_t& skipped) {
    ag::NoGradGuard guard;
    std::vector<std::array<Example, 2>> cache;
    skipped = 0;
    for (const auto& path : images) {
        imgproc::RgbImage img;
        try {
            img = imgproc::read_png(path);
        } catch (const FormatError&) {
            ++skipped;
            continue;
        }
        if (img.height % detector::ToyBackbone::kStride || img.width % detector::ToyBackbone::kStride) {
            ++skipped;
            continue;
        }
        std::array<Example, 2> e;
        e[0] = {backbone(detector::image_tensor(img)), pooled_target(img, detector::ToyBackbone::kStride)};
        if (with_flip) {
            const auto flipped = imgproc::flip_horizontal(img);
            e[1] = {backbone(detector::image_tensor(flipped)), pooled_target(flipped, detector::ToyBackbone::kStride)};
        }
        cache.push_back(std::move(e));
    }
    return cache;
}

}  // namespace

PretrainResult pretrain(const PretrainCorpus& corpus, const detector::ToyBackbone& backbone, SpbNet& net,
                        const PretrainConfig& cfg, const std::function<void(std::size_t, double)>& on_epoch) {
    if (corpus.images.empty()) throw ValueError("pretrain: empty corpus");
    if (cfg.batch == 0) throw ValueError("pretrain: batch must be positive");
    PretrainResult result;
    const auto cache = build_cache(corpus.images, backbone, cfg.flip, result.skipped_images);
    if (cache.empty()) throw FormatError("pretrain: no readable image in the corpus");

    std::vector<ag::Parameter> params;
    const auto tensors = net.parameters();
    for (std::size_t i = 0; i < tensors.size(); ++i) params.push_back({"spb." + std::to_string(i), tensors[i]});
    ag::AdamW opt(params, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

    {
        ag::NoGradGuard guard;
        double s = 0.0;
        for (const auto& e : cache) s += reconstruction_loss(net, e[0].feat, e[0].target).item();
        result.loss_trace.push_back(s / static_cast<double>(cache.size()));
        if (on_epoch) on_epoch(0, result.loss_trace.back());
    }

    ag::Rng rng(corpus.shuffle_seed);
    std::vector<std::size_t> order(cache.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            ag::Tensor batch_loss;
            for (std::size_t i = start; i < end; ++i) {
                const bool flip = cfg.flip && (rng() & 1);
                const Example& e = cache[order[i]][flip ? 1 : 0];
                auto l = reconstruction_loss(net, e.feat, e.target);
                epoch_sum += l.item();
                batch_loss = batch_loss.defined() ? batch_loss + l : l;
            }
            batch_loss = batch_loss * (1.0 / static_cast<double>(end - start));
            opt.zero_grad();
            batch_loss.backward();
            opt.step();
            ++result.steps;
        }
        result.loss_trace.push_back(epoch_sum / static_cast<double>(cache.size()));
        if (on_epoch) on_epoch(epoch, result.loss_trace.back());
    }
    return result;
}

double structural_correlation(const std::vector<std::filesystem::path>& images,
                              const detector::ToyBackbone& backbone, const SpbNet& net) {
    std::size_t skipped = 0;
    const auto cache = build_cache(images, backbone, false, skipped);
    ag::NoGradGuard guard;
    std::vector<double> a, b;
    for (const auto& e : cache) {
        const auto pred = ag::sigmoid(net.forward(e[0].feat));
        a.insert(a.end(), pred.data().begin(), pred.data().end());
        b.insert(b.end(), e[0].target.begin(), e[0].target.end());
    }
    if (a.size() < 2) throw ValueError("structural_correlation: not enough pixels");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0 || sbb == 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace caries::spb
