#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "caries/box.hpp"

namespace caries::eval {

inline constexpr std::size_t kNumThresholds = 10;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::array<double, kNumThresholds> iou_thresholds();

double iou_xyxy(const CornerBox& a, const CornerBox& b);

struct ScoredBox {
    std::size_t image = 0;
    BBox box;
    double score = 0;
};

struct GtBox {
    std::size_t image = 0;
    BBox box;
};

/// COCO-style AP of one class at one IoU threshold. Detections are visited in
/// the given order (sort by score descending first); each is matched to the
/// highest-IoU unmatched ground truth of its image with IoU >= thr. AP is the
/// mean of the interpolated precision at recall 0, 0.01, ..., 1.
/// No ground truth and no detections -> nullopt; no ground truth with
/// detections -> 0.
std::optional<double> ap_per_class(std::span<const ScoredBox> dets, std::span<const GtBox> gts, double thr);

struct ClassResult {
    bool has_gt = false;
    std::array<std::optional<double>, kNumThresholds> ap{};
    double ap_mean = 0;  // over thresholds; 0 when undefined
    double ap50 = 0;
    double ap75 = 0;
};

struct EvalResult {
    std::vector<ClassResult> per_class;
    double map = 0;
    double map50 = 0;
    double map75 = 0;
};

/// `dets[i]` and `gts[i]` describe the same image. mAP averages the per-class
/// means over classes with at least one ground-truth box.
EvalResult evaluate(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Object>>& gts,
                    std::size_t num_classes);

nlohmann::json to_json(const EvalResult& r, const std::vector<std::string>& class_names);
std::string format_table(const EvalResult& r, const std::vector<std::string>& class_names);

}  // namespace caries::eval
