#pragma once

#include "caries/autograd/tensor.hpp"
#include "caries/box.hpp"

namespace caries::ldlr {

/// Sum of absolute differences of (cx, cy, w, h).
double l1_box_loss(const BBox& pred, const BBox& target);

/// Generalized IoU: IoU - |C \ (A u B)| / |C| with C the smallest enclosing
/// box. Zero-area unions contribute an IoU of 0; a zero-area C contributes no
/// penalty. Range (-1, 1].
double giou(const CornerBox& a, const CornerBox& b);
inline double giou(const BBox& a, const BBox& b) { return giou(a.corners(), b.corners()); }

// Differentiable batched forms over rows of cxcywh boxes, [M,4] -> [M].
// Both expect boxes with positive area.
ag::Tensor l1_box_loss(const ag::Tensor& pred, const ag::Tensor& target);
ag::Tensor giou(const ag::Tensor& pred, const ag::Tensor& target);

}  // namespace caries::ldlr
