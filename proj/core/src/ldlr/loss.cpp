#include "caries/ldlr/loss.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

#include "caries/autograd/ops.hpp"
#include "caries/error.hpp"
#include "caries/ldlr/box_loss.hpp"

namespace caries::ldlr {

namespace {

std::atomic<std::size_t> g_clamps{0};

double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v))); }

double sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

double clamp_unit(double v) {
    if (v < 0.0 || v > 1.0 || std::isnan(v)) {
        g_clamps.fetch_add(1, std::memory_order_relaxed);
        return std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    }
    return v;
}

}  // namespace

double hardness_weight(double q, double eta) {
    if (eta < 0) throw ValueError("hardness_weight: negative sensitivity " + std::to_string(eta));
    return 1.0 + eta * (1.0 - clamp_unit(q));
}

std::size_t hardness_clamp_count() { return g_clamps.load(); }
void reset_hardness_clamp_count() { g_clamps.store(0); }

QualityVector quality_vector(double p_target, const BBox& pred, const BBox& target) {
    QualityVector q;
    q.cls = std::clamp(p_target, 0.0, 1.0);
    q.bbox = std::clamp(std::exp(-l1_box_loss(pred, target)), 0.0, 1.0);
    q.iou = std::clamp(iou(pred.corners(), target.corners()), 0.0, 1.0);
    return q;
}

LossWeights loss_weights(const QualityVector& q, const SensitivityConfig& eta) {
    return {hardness_weight(q.cls, eta.cls), hardness_weight(q.bbox, eta.bbox), hardness_weight(q.iou, eta.iou)};
}

double focal_loss(std::span<const double> logits, int target, const FocalConfig& cfg) {
    if (target >= static_cast<int>(logits.size()) || target < -1) {
        throw ValueError("focal_loss: class index " + std::to_string(target) + " invalid for " +
                         std::to_string(logits.size()) + " classes");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        const double x = logits[c];
        const bool positive = static_cast<int>(c) == target;
        const double p = sigmoid(x);
        const double pt = positive ? p : 1.0 - p;
        const double log_pt = positive ? -softplus(-x) : -softplus(x);
        const double alpha_t = positive ? cfg.alpha : 1.0 - cfg.alpha;
        total += -alpha_t * std::pow(1.0 - pt, cfg.gamma) * log_pt;
    }
    return total;
}

ag::Tensor focal_loss(const ag::Tensor& logits, const std::vector<int>& targets, const FocalConfig& cfg) {
    using namespace caries::ag;
    if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
        throw ShapeError("focal_loss: logits " + shape_str(logits.shape()) + " vs " + std::to_string(targets.size()) +
                         " targets");
    }
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<double> onehot(n * c, 0.0), alpha(n * c, 1.0 - cfg.alpha);
    for (std::size_t i = 0; i < n; ++i) {
        const int t = targets[i];
        if (t >= static_cast<int>(c) || t < -1) {
            throw ValueError("focal_loss: class index " + std::to_string(t) + " invalid for " + std::to_string(c) +
                             " classes");
        }
        if (t >= 0) {
            onehot[i * c + static_cast<std::size_t>(t)] = 1.0;
            alpha[i * c + static_cast<std::size_t>(t)] = cfg.alpha;
        }
    }
    const Tensor pos = Tensor::from({n, c}, onehot);
    const Tensor neg = 1.0 - pos;
    const Tensor alpha_t = Tensor::from({n, c}, alpha);
    Tensor p = sigmoid(logits);
    Tensor pt = pos * p + neg * (1.0 - p);
    Tensor log_pt = -(pos * softplus(-logits) + neg * softplus(logits));
    Tensor modulator = cfg.gamma == 0.0 ? Tensor::full({n, c}, 1.0) : pow(1.0 - pt, cfg.gamma);
    return sum(-(alpha_t * modulator * log_pt), 1);
}

LossBreakdown total_loss(const matcher::MatchResult& matches, const ag::Tensor& logits, const ag::Tensor& boxes,
                         std::span<const Object> targets, const SensitivityConfig& eta, const FocalConfig& focal) {
    using namespace caries::ag;
    if (logits.rank() != 2 || boxes.rank() != 2 || boxes.dim(1) != 4 || logits.dim(0) != boxes.dim(0)) {
        throw ShapeError("total_loss: logits " + shape_str(logits.shape()) + " and boxes " +
                         shape_str(boxes.shape()) + " disagree");
    }
    const std::size_t nq = logits.dim(0), nc = logits.dim(1);
    for (const auto& [q, g] : matches.pairs) {
        if (q >= nq || g >= targets.size()) {
            throw ValueError("total_loss: match (" + std::to_string(q) + "," + std::to_string(g) + ") out of range");
        }
    }
    for (auto q : matches.unmatched)
        if (q >= nq) throw ValueError("total_loss: unmatched query " + std::to_string(q) + " out of range");

    LossBreakdown out;
    const std::size_t m = matches.pairs.size();
    out.num_pos = m;
    Tensor cls_term = Tensor::scalar(0.0);
    Tensor bbox_term = Tensor::scalar(0.0);
    Tensor giou_term = Tensor::scalar(0.0);

    if (m > 0) {
        std::vector<std::size_t> qidx;
        std::vector<int> cls;
        std::vector<double> tgt_boxes;
        for (const auto& [q, g] : matches.pairs) {
            qidx.push_back(q);
            cls.push_back(targets[g].class_id);
            const BBox& b = targets[g].box;
            tgt_boxes.insert(tgt_boxes.end(), {b.cx, b.cy, b.w, b.h});
        }
        Tensor pos_logits = gather(logits, 0, qidx);
        Tensor pos_boxes = gather(boxes, 0, qidx);
        Tensor tgt = Tensor::from({m, 4}, tgt_boxes);

        // Weights from detached values; they never carry gradient.
        std::vector<double> wc(m), wb(m), wi(m);
        const auto ld = logits.data();
        const auto bd = boxes.data();
        for (std::size_t k = 0; k < m; ++k) {
            const auto [q, g] = matches.pairs[k];
            const double p = sigmoid(ld[q * nc + static_cast<std::size_t>(cls[k])]);
            const BBox pred{bd[q * 4], bd[q * 4 + 1], bd[q * 4 + 2], bd[q * 4 + 3]};
            const LossWeights w = loss_weights(quality_vector(p, pred, targets[g].box), eta);
            const auto check = [](double v, double e, const char* term) {
                if (!(v >= 1.0 && v <= 1.0 + e)) {
                    throw std::logic_error(std::string("hardness weight for ") + term + " = " + std::to_string(v) +
                                           " outside [1, 1+eta]");
                }
            };
            check(w.cls, eta.cls, "cls");
            check(w.bbox, eta.bbox, "bbox");
            check(w.iou, eta.iou, "iou");
            wc[k] = w.cls;
            wb[k] = w.bbox;
            wi[k] = w.iou;
            out.weights.push_back(w);
            out.weight_sum.cls += w.cls;
            out.weight_sum.bbox += w.bbox;
            out.weight_sum.iou += w.iou;
        }
        cls_term = sum(Tensor::from({m}, wc) * focal_loss(pos_logits, cls, focal));
        bbox_term = sum(Tensor::from({m}, wb) * l1_box_loss(pos_boxes, tgt));
        giou_term = sum(Tensor::from({m}, wi) * (1.0 - giou(pos_boxes, tgt)));
    }
    if (!matches.unmatched.empty()) {
        Tensor bg_logits = gather(logits, 0, matches.unmatched);
        cls_term = cls_term + sum(focal_loss(bg_logits, std::vector<int>(matches.unmatched.size(), -1), focal));
    }
    out.cls = cls_term.item();
    out.bbox = bbox_term.item();
    out.giou = giou_term.item();
    out.total = cls_term + bbox_term + giou_term;
    out.total_value = out.total.item();
    return out;
}

}  // namespace caries::ldlr
