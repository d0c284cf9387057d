#include "caries/detector/model.hpp"

#include <algorithm>
#include <cmath>

namespace caries::detector {

namespace {

constexpr double kPriorProb = 0.01;

ag::Tensor ref_logits(const std::vector<BBox>& ref) {
    std::vector<double> v;
    v.reserve(4 * ref.size());
    for (const auto& b : ref) {
        v.push_back(inverse_sigmoid(b.cx));
        v.push_back(inverse_sigmoid(b.cy));
        v.push_back(inverse_sigmoid(b.w));
        v.push_back(inverse_sigmoid(b.h));
    }
    return ag::Tensor::from({ref.size(), 4}, std::move(v));
}

ag::Tensor ref_position(const std::vector<BBox>& ref, std::size_t d) {
    std::vector<double> cx, cy;
    for (const auto& b : ref) {
        cx.push_back(b.cx);
        cy.push_back(b.cy);
    }
    return tsqi::positional_encoding(cx, cy, d);
}

}  // namespace

double inverse_sigmoid(double p) {
    const double eps = 1e-5;
    p = std::clamp(p, eps, 1.0 - eps);
    return std::log(p / (1.0 - p));
}

void ModelConfig::validate() const {
    if (image_size == 0 || image_size % ToyBackbone::kStride != 0) {
        throw ValueError("model: image size must be a positive multiple of 8");
    }
    if (num_classes == 0) throw ValueError("model: need at least one class");
    if (feat_channels != d_model) throw ValueError("model: feature channels must equal d_model");
    if (heads == 0 || d_model % heads != 0) throw ValueError("model: d_model must be divisible by heads");
    if (d_model % 4 != 0) throw ValueError("model: d_model must be a multiple of 4");
    if (layers == 0) throw ValueError("model: need at least one decoder layer");
    const std::size_t cells = (image_size / ToyBackbone::kStride) * (image_size / ToyBackbone::kStride);
    if (topk == 0 || topk > cells) {
        throw ValueError("model: K=" + std::to_string(topk) + " outside [1, " + std::to_string(cells) + "]");
    }
    if (!(ref_size > 0 && ref_size < 1)) throw ValueError("model: reference size must lie in (0,1)");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"image_size", c.image_size}, {"num_classes", c.num_classes}, {"feat_channels", c.feat_channels},
            {"spb_hidden", c.spb_hidden}, {"d_model", c.d_model},         {"heads", c.heads},
            {"ffn", c.ffn},               {"layers", c.layers},           {"topk", c.topk},
            {"lambda_init", c.lambda_init}, {"ref_size", c.ref_size},     {"no_tsqi", c.no_tsqi}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.image_size = j.at("image_size").get<std::size_t>();
        c.num_classes = j.at("num_classes").get<std::size_t>();
        c.feat_channels = j.at("feat_channels").get<std::size_t>();
        c.spb_hidden = j.at("spb_hidden").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.ffn = j.at("ffn").get<std::size_t>();
        c.layers = j.at("layers").get<std::size_t>();
        c.topk = j.at("topk").get<std::size_t>();
        c.lambda_init = j.at("lambda_init").get<double>();
        c.ref_size = j.at("ref_size").get<double>();
        c.no_tsqi = j.at("no_tsqi").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

Attention::Attention(ag::ParameterStore& store, const std::string& name, std::size_t d, std::size_t h,
                     ag::Rng& rng)
    : wq(store, name + ".q", d, d, rng),
      wk(store, name + ".k", d, d, rng),
      wv(store, name + ".v", d, d, rng),
      wo(store, name + ".o", d, d, rng),
      heads(h) {}

ag::Tensor Attention::operator()(const ag::Tensor& query, const ag::Tensor& key, const ag::Tensor& value) const {
    const ag::Tensor q = wq(query), k = wk(key), v = wv(value);
    const std::size_t d = q.dim(1), dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ag::Tensor> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        const ag::Tensor qh = ag::narrow(q, 1, h * dh, dh);
        const ag::Tensor kh = ag::narrow(k, 1, h * dh, dh);
        const ag::Tensor vh = ag::narrow(v, 1, h * dh, dh);
        const ag::Tensor att = ag::softmax(ag::matmul(qh, ag::transpose(kh)) * scale, 1);
        outs.push_back(ag::matmul(att, vh));
    }
    return wo(heads == 1 ? outs[0] : ag::concat(outs, 1));
}

DecoderLayer::DecoderLayer(ag::ParameterStore& store, const std::string& name, const ModelConfig& cfg,
                           ag::Rng& rng)
    : cross(store, name + ".cross", cfg.d_model, cfg.heads, rng),
      norm1(store, name + ".norm1", cfg.d_model),
      norm2(store, name + ".norm2", cfg.d_model),
      ff1(store, name + ".ff1", cfg.d_model, cfg.ffn, rng),
      ff2(store, name + ".ff2", cfg.ffn, cfg.d_model, rng) {}

ag::Tensor DecoderLayer::operator()(const ag::Tensor& tgt, const ag::Tensor& query_pos, const ag::Tensor& memory,
                                    const ag::Tensor& memory_key) const {
    ag::Tensor x = norm1(tgt + cross(tgt + query_pos, memory_key, memory));
    return norm2(x + ff2(ag::relu(ff1(x))));
}

Detector::Detector(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    ag::Rng rng(seed);
    // Construction order is fixed so every flag combination starts from the same weights.
    backbone_ = ToyBackbone(store_, "backbone", cfg_.feat_channels, rng);
    spb_ = spb::SpbNet(store_, "spb", cfg_.feat_channels, cfg_.spb_hidden, rng);
    sem_head_ = ag::Conv2d(store_, "tsqi.sem_head", cfg_.feat_channels, cfg_.num_classes, 1, 1, 0, rng);
    const double prior_bias = -std::log((1.0 - kPriorProb) / kPriorProb);
    std::fill(sem_head_.bias.mutable_data().begin(), sem_head_.bias.mutable_data().end(), prior_bias);
    lambda_ = store_.add("tsqi.lambda", ag::Tensor::full({1}, cfg_.lambda_init));
    psi_ = ag::Linear(store_, "tsqi.psi", cfg_.d_model + 1, cfg_.d_model, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        decoder_.emplace_back(store_, "decoder." + std::to_string(l), cfg_, rng);
    }
    cls_head_ = ag::Linear(store_, "head.cls", cfg_.d_model, cfg_.num_classes, rng);
    std::fill(cls_head_.bias.mutable_data().begin(), cls_head_.bias.mutable_data().end(), prior_bias);
    box1_ = ag::Linear(store_, "head.box1", cfg_.d_model, cfg_.d_model, rng);
    box2_ = ag::Linear(store_, "head.box2", cfg_.d_model, cfg_.d_model, rng);
    box3_ = ag::Linear(store_, "head.box3", cfg_.d_model, 4, rng);
    // Zero offsets at init: the first prediction is the reference box itself.
    for (auto* t : {&box3_.weight, &box3_.bias}) {
        std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
    }

    const std::size_t side = cfg_.image_size / ToyBackbone::kStride;
    std::vector<double> cx, cy;
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            cx.push_back((static_cast<double>(x) + 0.5) / static_cast<double>(side));
            cy.push_back((static_cast<double>(y) + 0.5) / static_cast<double>(side));
        }
    memory_pos_ = tsqi::positional_encoding(cx, cy, cfg_.d_model);
}

void Detector::set_topk(std::size_t k) {
    ModelConfig c = cfg_;
    c.topk = k;
    c.validate();
    cfg_.topk = k;
}

ForwardOutput Detector::forward(const ag::Tensor& image) const {
    const ag::Shape want{3, cfg_.image_size, cfg_.image_size};
    if (image.shape() != want) {
        throw ShapeError("forward: expected image " + ag::shape_str(want) + ", got " + ag::shape_str(image.shape()));
    }
    ForwardOutput out;
    out.features = backbone_(image);
    out.semantic_logits = sem_head_(out.features);
    out.semantic = ag::max_over_axis(ag::sigmoid(out.semantic_logits), 0);
    if (cfg_.no_tsqi) {
        out.hybrid = out.semantic;
    } else {
        out.saliency = tsqi::compute_saliency(out.features, spb_);
        out.hybrid = tsqi::hybrid_scores(out.semantic, out.saliency, lambda_);
    }
    out.anchors = tsqi::select_topk(out.hybrid, cfg_.topk);
    out.queries = tsqi::build_queries(out.anchors, psi_, cfg_.d_model, cfg_.ref_size);

    const std::size_t c = out.features.dim(0), hw = out.features.dim(1) * out.features.dim(2);
    const ag::Tensor memory = ag::transpose(ag::reshape(out.features, {c, hw}));
    const ag::Tensor memory_key = memory + memory_pos_;

    ag::Tensor tgt = out.queries.embeddings;
    std::vector<BBox> ref = out.queries.reference;
    for (const auto& layer : decoder_) {
        tgt = layer(tgt, ref_position(ref, cfg_.d_model), memory, memory_key);
        LayerPrediction pred;
        pred.logits = cls_head_(tgt);
        const ag::Tensor offset = box3_(ag::relu(box2_(ag::relu(box1_(tgt)))));
        pred.boxes = ag::sigmoid(ref_logits(ref) + offset);
        // The next layer refines from the detached prediction.
        const auto b = pred.boxes.data();
        for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = {b[4 * i], b[4 * i + 1], b[4 * i + 2], b[4 * i + 3]};
        out.layers.push_back(std::move(pred));
    }
    return out;
}

std::vector<Detection> Detector::detections(const ForwardOutput& out) const {
    const auto& last = out.final_layer();
    const std::size_t k = last.logits.dim(0), nc = last.logits.dim(1);
    const auto logits = last.logits.data();
    const auto boxes = last.boxes.data();
    std::vector<Detection> dets;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < nc; ++c)
            if (logits[i * nc + c] > logits[i * nc + best]) best = c;
        Detection d;
        d.class_id = static_cast<int>(best);
        d.score = 1.0 / (1.0 + std::exp(-logits[i * nc + best]));
        d.box = {boxes[4 * i], boxes[4 * i + 1], boxes[4 * i + 2], boxes[4 * i + 3]};
        dets.push_back(d);
    }
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return dets;
}

std::vector<Detection> Detector::infer(const imgproc::RgbImage& img, double score_threshold) const {
    ag::NoGradGuard guard;
    auto dets = detections(forward(image_tensor(img)));
    std::erase_if(dets, [&](const Detection& d) { return d.score < score_threshold; });
    return dets;
}

std::vector<ag::Parameter> Detector::trainable(bool freeze_spb) const {
    std::vector<ag::Parameter> out;
    for (const auto& p : store_.items()) {
        const bool is_spb = p.name.rfind("spb.", 0) == 0;
        if (is_spb && (freeze_spb || cfg_.no_tsqi)) continue;
        if (p.name == "tsqi.lambda" && cfg_.no_tsqi) continue;
        out.push_back(p);
    }
    return out;
}

void Detector::load_pretrained(const ag::Checkpoint& ckpt) {
    ag::ParameterStore subset;
    for (const auto& p : store_.items()) {
        if (p.name.rfind("backbone.", 0) == 0 || p.name.rfind("spb.", 0) == 0) subset.add(p.name, p.tensor);
    }
    ag::restore_parameters(subset, ckpt);
}

}  // namespace caries::detector
