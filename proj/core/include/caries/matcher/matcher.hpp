#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "caries/box.hpp"

namespace caries::matcher {

/// Rows are queries, columns are ground-truth objects.
struct CostMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    CostMatrix() = default;
    CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct MatchResult {
    /// (query, gt) pairs ordered by gt index; every gt appears exactly once.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<std::size_t> unmatched;  // ascending query indices
    double total_cost = 0.0;
};

struct CostCoefficients {
    double cls = 2.0;
    double l1 = 5.0;
    double giou = 2.0;
};

/// cost(q, g) = cls*(-p_q[class_g]) + l1*L1(b_q, b_g) + giou*(1 - GIoU(b_q, b_g)).
/// `probs` is row-major [queries x num_classes] of per-class probabilities.
CostMatrix match_cost(std::span<const double> probs, std::size_t num_classes, std::span<const BBox> pred_boxes,
                      std::span<const Object> gts, CostCoefficients coef = {});

/// Minimum-cost assignment of every column to a distinct row. Among optimal
/// assignments, returns the one whose query list in gt order is
/// lexicographically smallest. Throws if cols > rows or on non-finite costs.
MatchResult hungarian(const CostMatrix& cost);

}  // namespace caries::matcher
