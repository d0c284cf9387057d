#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "caries/autograd/tensor.hpp"
#include "caries/box.hpp"
#include "caries/matcher/matcher.hpp"

namespace caries::ldlr {

/// Prediction quality of one matched pair; every component in [0,1].
struct QualityVector {
    double cls = 0;   // probability of the target class
    double bbox = 0;  // exp(-L1) of the box difference
    double iou = 0;
};

/// Per-term sensitivities of the hardness penalty (all >= 0).
struct SensitivityConfig {
    double cls = 1.0;
    double bbox = 1.0;
    double iou = 1.0;
};

struct FocalConfig {
    double alpha = 0.25;
    double gamma = 2.0;
};

struct LossWeights {
    double cls = 1;
    double bbox = 1;
    double iou = 1;
};

/// omega(q; eta) = 1 + eta * (1 - q). Out-of-range q is clamped into [0,1]
/// and counted (see hardness_clamp_count()).
double hardness_weight(double q, double eta);
std::size_t hardness_clamp_count();
void reset_hardness_clamp_count();

QualityVector quality_vector(double p_target, const BBox& pred, const BBox& target);
LossWeights loss_weights(const QualityVector& q, const SensitivityConfig& eta);

/// Sigmoid focal loss of one query summed over classes. `target` is the
/// ground-truth class, or -1 for background (every class negative).
double focal_loss(std::span<const double> logits, int target, const FocalConfig& cfg);

/// Batched, differentiable form: logits [N,C], one target per row -> [N].
ag::Tensor focal_loss(const ag::Tensor& logits, const std::vector<int>& targets, const FocalConfig& cfg);

struct LossBreakdown {
    ag::Tensor total;  // differentiable scalar
    double total_value = 0;
    double cls = 0;   // weighted positive focal + background focal
    double bbox = 0;  // weighted L1
    double giou = 0;  // weighted (1 - GIoU)
    std::size_t num_pos = 0;
    std::vector<LossWeights> weights;  // one per matched pair, in pair order
    LossWeights weight_sum{0, 0, 0};
};

/// Dynamically weighted detection objective for one image:
///   sum_pos [w_cls*Focal + w_bbox*L1 + w_iou*(1 - GIoU)] + sum_unmatched Focal_bg.
/// `logits` is [K,C] raw class logits and `boxes` is [K,4] cxcywh in [0,1].
/// Weights are computed from detached predictions and enter as constants.
/// Throws std::logic_error if an emitted weight leaves [1, 1+eta].
LossBreakdown total_loss(const matcher::MatchResult& matches, const ag::Tensor& logits, const ag::Tensor& boxes,
                         std::span<const Object> targets, const SensitivityConfig& eta, const FocalConfig& focal);

}  // namespace caries::ldlr
