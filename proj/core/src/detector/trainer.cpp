#include "caries/detector/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "caries/matcher/matcher.hpp"

namespace caries::detector {

using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs == 0) throw ValueError("train: epochs must be positive");
    if (batch == 0) throw ValueError("train: batch must be positive");
    if (!(lr > 0) || !std::isfinite(lr)) throw ValueError("train: learning rate must be positive");
    if (weight_decay < 0) throw ValueError("train: weight decay must be non-negative");
    if (topk == 0) throw ValueError("train: K must be positive");
    if (eta.cls < 0 || eta.bbox < 0 || eta.iou < 0) throw ValueError("train: sensitivities must be non-negative");
    if (!(sem_aux >= 0)) throw ValueError("train: semantic loss weight must be non-negative");
    if (focal.alpha < 0 || focal.alpha > 1 || focal.gamma < 0) throw ValueError("train: bad focal parameters");
}

ldlr::SensitivityConfig TrainConfig::effective_eta() const {
    return no_ldlr ? ldlr::SensitivityConfig{0.0, 0.0, 0.0} : eta;
}

json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch", c.batch},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"topk", c.topk},
            {"lambda_init", c.lambda_init},
            {"eta", {{"cls", c.eta.cls}, {"bbox", c.eta.bbox}, {"iou", c.eta.iou}}},
            {"focal", {{"alpha", c.focal.alpha}, {"gamma", c.focal.gamma}}},
            {"seed", c.seed},
            {"no_tsqi", c.no_tsqi},
            {"no_ldlr", c.no_ldlr},
            {"freeze_spb", c.freeze_spb},
            {"flip", c.flip},
            {"sem_aux", c.sem_aux}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    try {
        c.epochs = j.at("epochs").get<std::size_t>();
        c.batch = j.at("batch").get<std::size_t>();
        c.lr = j.at("lr").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.topk = j.at("topk").get<std::size_t>();
        c.lambda_init = j.at("lambda_init").get<double>();
        c.eta = {j.at("eta").at("cls").get<double>(), j.at("eta").at("bbox").get<double>(),
                 j.at("eta").at("iou").get<double>()};
        c.focal = {j.at("focal").at("alpha").get<double>(), j.at("focal").at("gamma").get<double>()};
        c.seed = j.at("seed").get<std::uint64_t>();
        c.no_tsqi = j.at("no_tsqi").get<bool>();
        c.no_ldlr = j.at("no_ldlr").get<bool>();
        c.freeze_spb = j.at("freeze_spb").get<bool>();
        c.flip = j.at("flip").get<bool>();
        c.sem_aux = j.at("sem_aux").get<double>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

Sample make_sample(const imgproc::RgbImage& img, const std::vector<Object>& objects, bool flip) {
    Sample s;
    s.objects = objects;
    if (!flip) {
        s.image = image_tensor(img);
        return s;
    }
    s.image = image_tensor(imgproc::flip_horizontal(img));
    for (auto& o : s.objects) o.box.cx = 1.0 - o.box.cx;
    return s;
}

ag::Tensor semantic_loss(const ag::Tensor& semantic_logits, std::span<const Object> objects,
                         const ldlr::FocalConfig& focal) {
    if (semantic_logits.rank() != 3) throw ShapeError("semantic_loss: expected [C,h,w] logits");
    const std::size_t nc = semantic_logits.dim(0), h = semantic_logits.dim(1), w = semantic_logits.dim(2);
    std::vector<int> targets(h * w, -1);
    for (const auto& o : objects) {
        if (o.class_id < 0 || static_cast<std::size_t>(o.class_id) >= nc) throw ValueError("semantic_loss: bad class id");
        const auto gx = std::min(w - 1, static_cast<std::size_t>(std::max(0.0, o.box.cx) * static_cast<double>(w)));
        const auto gy = std::min(h - 1, static_cast<std::size_t>(std::max(0.0, o.box.cy) * static_cast<double>(h)));
        targets[gy * w + gx] = o.class_id;
    }
    const ag::Tensor rows = ag::transpose(ag::reshape(semantic_logits, {nc, h * w}));
    return ag::sum(ldlr::focal_loss(rows, targets, focal));
}

SampleLoss sample_loss(const Sample& sample, const Detector& model, const TrainConfig& cfg) {
    const ForwardOutput out = model.forward(sample.image);
    const auto& last = out.final_layer();
    const std::size_t k = last.logits.dim(0), nc = last.logits.dim(1);
    std::vector<double> probs(last.logits.data().begin(), last.logits.data().end());
    for (auto& p : probs) p = 1.0 / (1.0 + std::exp(-p));
    std::vector<BBox> boxes(k);
    const auto b = last.boxes.data();
    for (std::size_t i = 0; i < k; ++i) boxes[i] = {b[4 * i], b[4 * i + 1], b[4 * i + 2], b[4 * i + 3]};
    const auto cost = matcher::match_cost(probs, nc, boxes, sample.objects);
    const auto matches = matcher::hungarian(cost);
    SampleLoss r;
    r.detection = ldlr::total_loss(matches, last.logits, last.boxes, sample.objects, cfg.effective_eta(), cfg.focal);
    r.total = r.detection.total;
    if (cfg.sem_aux > 0) {
        const ag::Tensor sem = semantic_loss(out.semantic_logits, sample.objects, cfg.focal);
        r.semantic = sem.item();
        r.total = r.total + sem * cfg.sem_aux;
    }
    return r;
}

namespace {

double max_abs_grad(const std::vector<ag::Parameter>& params) {
    double m = 0.0;
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) m = std::max(m, std::isfinite(g) ? std::fabs(g) : INFINITY);
    }
    return m;
}

[[noreturn]] void diverged(const char* what, std::size_t iter, const ag::AdamW& opt) {
    std::ostringstream os;
    os << what << " at iteration " << iter << " (lr " << opt.config().lr << ", max |grad| "
       << max_abs_grad(opt.params()) << ")";
    throw TrainingDiverged(os.str());
}

}  // namespace

StepStats train_step(std::span<const Sample> batch, const Detector& model, ag::AdamW& opt, const TrainConfig& cfg,
                     std::size_t iter) {
    if (batch.empty()) throw ValueError("train_step: empty batch");
    StepStats st;
    st.iter = iter;
    ag::Tensor total;
    ldlr::LossWeights wsum{0, 0, 0};
    for (const auto& s : batch) {
        const auto sl = sample_loss(s, model, cfg);
        const auto& lb = sl.detection;
        total = total.defined() ? total + sl.total : sl.total;
        st.sem += cfg.sem_aux * sl.semantic;
        st.cls += lb.cls;
        st.bbox += lb.bbox;
        st.giou += lb.giou;
        st.num_pos += lb.num_pos;
        wsum.cls += lb.weight_sum.cls;
        wsum.bbox += lb.weight_sum.bbox;
        wsum.iou += lb.weight_sum.iou;
    }
    st.total = total.item();
    if (st.num_pos > 0) {
        const double n = static_cast<double>(st.num_pos);
        st.mean_w_cls = wsum.cls / n;
        st.mean_w_bbox = wsum.bbox / n;
        st.mean_w_iou = wsum.iou / n;
    }
    opt.zero_grad();
    if (!std::isfinite(st.total)) diverged("non-finite loss", iter, opt);
    total.backward();
    for (const auto& p : opt.params()) {
        if (p.tensor.has_nonfinite()) diverged("non-finite gradient", iter, opt);
    }
    opt.step();
    return st;
}

void write_loss_header(std::ostream& os) { os << "iter,total,cls,bbox,giou,w_cls,w_bbox,w_iou,sem\n"; }

void write_loss_row(std::ostream& os, const StepStats& s) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.iter, s.total, s.cls,
                  s.bbox, s.giou, s.mean_w_cls, s.mean_w_bbox, s.mean_w_iou, s.sem);
    os << buf;
}

ModelConfig model_config_for(const TrainConfig& cfg, std::size_t num_classes, std::size_t image_size) {
    ModelConfig m;
    m.num_classes = num_classes;
    m.image_size = image_size;
    m.topk = cfg.topk;
    m.lambda_init = cfg.lambda_init;
    m.no_tsqi = cfg.no_tsqi;
    return m;
}

TrainResult train(const data::Dataset& ds, Detector& model, const TrainConfig& cfg, std::ostream* loss_csv,
                  const std::function<void(std::size_t, double)>& on_epoch) {
    cfg.validate();
    if (ds.images.empty()) throw ValueError("train: empty dataset");
    if (cfg.topk < ds.max_objects_per_image()) {
        throw ValueError("train: K=" + std::to_string(cfg.topk) + " is below the largest object count per image (" +
                         std::to_string(ds.max_objects_per_image()) + ")");
    }
    if (ds.classes.size() != model.config().num_classes) throw ValueError("train: class count mismatch");

    std::vector<imgproc::RgbImage> images;
    images.reserve(ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i) images.push_back(imgproc::read_png(ds.image_path(i)));

    ag::AdamW opt(model.trainable(cfg.freeze_spb), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    // Separate stream from weight init so data order does not shift with the architecture.
    ag::Rng rng(cfg.seed ^ 0x5DEECE66DULL);
    std::vector<std::size_t> order(images.size());
    if (loss_csv) write_loss_header(*loss_csv);

    TrainResult result;
    std::size_t iter = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            std::vector<Sample> batch;
            for (std::size_t i = start; i < end; ++i) {
                const bool flip = cfg.flip && (rng() & 1);
                batch.push_back(make_sample(images[order[i]], ds.objects[order[i]], flip));
            }
            const StepStats st = train_step(batch, model, opt, cfg, ++iter);
            epoch_total += st.total;
            if (loss_csv) write_loss_row(*loss_csv, st);
            result.steps.push_back(st);
        }
        if (on_epoch) on_epoch(epoch, epoch_total / static_cast<double>(images.size()));
    }
    return result;
}

void save_model(const std::filesystem::path& path, const Detector& model, const TrainConfig& cfg) {
    ag::Checkpoint ck;
    ck.params = model.params().items();
    ck.meta = {{"kind", "detector"}};
    ag::save_checkpoint(path, ck);
    json side = {{"model", to_json(model.config())}, {"train", to_json(cfg)}};
    std::ofstream out(path.string() + ".json", std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string() + ".json");
    out << side.dump(2) << "\n";
}

LoadedModel load_model(const std::filesystem::path& path) {
    const std::filesystem::path side_path = path.string() + ".json";
    std::ifstream in(side_path);
    if (!in) throw FormatError("cannot open model config " + side_path.string());
    json side;
    try {
        side = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(side_path.string() + ": " + e.what());
    }
    if (!side.contains("model") || !side.contains("train")) {
        throw FormatError(side_path.string() + ": needs 'model' and 'train' sections");
    }
    LoadedModel lm{Detector(model_config_from_json(side["model"]), 0), train_config_from_json(side["train"])};
    ag::restore_parameters(lm.model.params(), ag::load_checkpoint(path));
    return lm;
}

}  // namespace caries::detector
