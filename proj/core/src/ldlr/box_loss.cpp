#include "caries/ldlr/box_loss.hpp"

#include <algorithm>
#include <cmath>

#include "caries/autograd/ops.hpp"
#include "caries/error.hpp"

namespace caries::ldlr {

double l1_box_loss(const BBox& pred, const BBox& target) {
    return std::fabs(pred.cx - target.cx) + std::fabs(pred.cy - target.cy) + std::fabs(pred.w - target.w) +
           std::fabs(pred.h - target.h);
}

double giou(const CornerBox& a, const CornerBox& b) {
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    const double iou_term = uni > 0 ? inter / uni : 0.0;
    const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
    const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
    const double enclosing = cw * ch;
    if (!(enclosing > 0)) return iou_term;
    return iou_term - (enclosing - uni) / enclosing;
}

namespace {

struct Corners {
    ag::Tensor x1, y1, x2, y2, area;
};

Corners corners_of(const ag::Tensor& boxes) {
    using namespace caries::ag;
    Tensor cx = narrow(boxes, 1, 0, 1), cy = narrow(boxes, 1, 1, 1);
    Tensor w = narrow(boxes, 1, 2, 1), h = narrow(boxes, 1, 3, 1);
    Tensor hw = w * 0.5, hh = h * 0.5;
    return {cx - hw, cy - hh, cx + hw, cy + hh, w * h};
}

void check_boxes(const ag::Tensor& pred, const ag::Tensor& target, const char* op) {
    if (pred.rank() != 2 || pred.dim(1) != 4 || pred.shape() != target.shape()) {
        throw ShapeError(std::string(op) + ": expected matching [M,4] boxes, got " + ag::shape_str(pred.shape()) +
                         " and " + ag::shape_str(target.shape()));
    }
}

}  // namespace

ag::Tensor l1_box_loss(const ag::Tensor& pred, const ag::Tensor& target) {
    check_boxes(pred, target, "l1_box_loss");
    return ag::sum(ag::abs(pred - target), 1);
}

ag::Tensor giou(const ag::Tensor& pred, const ag::Tensor& target) {
    using namespace caries::ag;
    check_boxes(pred, target, "giou");
    const std::size_t m = pred.dim(0);
    Corners a = corners_of(pred), b = corners_of(target);
    Tensor iw = relu(minimum(a.x2, b.x2) - maximum(a.x1, b.x1));
    Tensor ih = relu(minimum(a.y2, b.y2) - maximum(a.y1, b.y1));
    Tensor inter = iw * ih;
    Tensor uni = a.area + b.area - inter;
    Tensor cw = maximum(a.x2, b.x2) - minimum(a.x1, b.x1);
    Tensor ch = maximum(a.y2, b.y2) - minimum(a.y1, b.y1);
    Tensor enclosing = cw * ch;
    Tensor g = inter / uni - (enclosing - uni) / enclosing;
    return reshape(g, {m});
}

}  // namespace caries::ldlr
