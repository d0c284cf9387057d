#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "caries/autograd/checkpoint.hpp"
#include "caries/autograd/nn.hpp"
#include "caries/box.hpp"
#include "caries/detector/backbone.hpp"
#include "caries/spb/spb.hpp"
#include "caries/tsqi/tsqi.hpp"

namespace caries::detector {

struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t num_classes = 3;
    std::size_t feat_channels = 64;
    std::size_t spb_hidden = 32;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t ffn = 128;
    std::size_t layers = 2;
    std::size_t topk = 16;
    double lambda_init = 1.0;
    double ref_size = 0.1;
    bool no_tsqi = false;  // queries from top-K of S_sem with v_i = S_sem

    void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Multi-head attention with separate query/key/value/output projections.
struct Attention {
    ag::Linear wq, wk, wv, wo;
    std::size_t heads = 1;

    Attention() = default;
    Attention(ag::ParameterStore& store, const std::string& name, std::size_t d_model, std::size_t heads,
              ag::Rng& rng);
    ag::Tensor operator()(const ag::Tensor& query, const ag::Tensor& key, const ag::Tensor& value) const;
};

/// Cross-attention over the feature tokens, then a 2-layer FFN; each with a
/// residual connection and layer norm.
struct DecoderLayer {
    Attention cross;
    ag::LayerNorm norm1, norm2;
    ag::Linear ff1, ff2;

    DecoderLayer() = default;
    DecoderLayer(ag::ParameterStore& store, const std::string& name, const ModelConfig& cfg, ag::Rng& rng);
    ag::Tensor operator()(const ag::Tensor& tgt, const ag::Tensor& query_pos, const ag::Tensor& memory,
                          const ag::Tensor& memory_key) const;
};

struct LayerPrediction {
    ag::Tensor logits;  // [K, C]
    ag::Tensor boxes;   // [K, 4] cxcywh in [0,1]
};

struct ForwardOutput {
    ag::Tensor features;         // [C_feat, h, w]
    ag::Tensor semantic_logits;  // [C, h, w] raw semantic head output
    ag::Tensor semantic;         // [h, w]
    ag::Tensor saliency;  // [h, w]; undefined on the no_tsqi path
    ag::Tensor hybrid;    // [h, w] map the anchors were selected from
    tsqi::AnchorSet anchors;
    tsqi::QuerySet queries;
    std::vector<LayerPrediction> layers;

    const LayerPrediction& final_layer() const { return layers.back(); }
};

class Detector {
public:
    Detector(const ModelConfig& cfg, std::uint64_t seed);
    Detector(const Detector&) = delete;
    Detector& operator=(const Detector&) = delete;
    Detector(Detector&&) = default;

    const ModelConfig& config() const { return cfg_; }
    ag::ParameterStore& params() { return store_; }
    const ag::ParameterStore& params() const { return store_; }

    const ToyBackbone& backbone() const { return backbone_; }
    const spb::SpbNet& spb() const { return spb_; }
    const ag::Tensor& lambda() const { return lambda_; }

    /// The no_tsqi switch only changes which score map seeds the queries.
    void set_no_tsqi(bool flag) { cfg_.no_tsqi = flag; }
    void set_topk(std::size_t k);

    /// image: [3, S, S] as produced by image_tensor().
    ForwardOutput forward(const ag::Tensor& image) const;

    /// One detection per query from the final layer: arg-max class and its
    /// sigmoid probability; sorted by score descending (stable).
    std::vector<Detection> detections(const ForwardOutput& out) const;

    /// Detections with score >= threshold.
    std::vector<Detection> infer(const imgproc::RgbImage& img, double score_threshold) const;

    /// Parameters the optimizer should update. Unused branches (SPB and
    /// lambda on the no_tsqi path) and a frozen SPB are left out.
    std::vector<ag::Parameter> trainable(bool freeze_spb) const;

    /// Copies backbone.* and spb.* from a pretraining checkpoint.
    void load_pretrained(const ag::Checkpoint& ckpt);

private:
    ModelConfig cfg_;
    ag::ParameterStore store_;
    ToyBackbone backbone_;
    spb::SpbNet spb_;
    ag::Conv2d sem_head_;
    ag::Tensor lambda_;
    ag::Linear psi_;
    std::vector<DecoderLayer> decoder_;
    ag::Linear cls_head_;
    ag::Linear box1_, box2_, box3_;
    ag::Tensor memory_pos_;  // [h*w, d_model]
};

/// Inverse of the logistic function, clamped away from 0 and 1.
double inverse_sigmoid(double p);

}  // namespace caries::detector
