#pragma once

#include <cstddef>

namespace caries {

/// Axis-aligned box in corner form.
struct CornerBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double area() const { return (x2 > x1 && y2 > y1) ? (x2 - x1) * (y2 - y1) : 0.0; }
};

/// Center/size box, normalized to the image extent.
struct BBox {
    double cx = 0, cy = 0, w = 0, h = 0;

    CornerBox corners() const { return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}; }
    static BBox from_corners(const CornerBox& c) {
        return {0.5 * (c.x1 + c.x2), 0.5 * (c.y1 + c.y2), c.x2 - c.x1, c.y2 - c.y1};
    }
    bool valid() const;  // finite, w,h >= 0
    bool operator==(const BBox&) const = default;
};

/// One annotated object.
struct Object {
    BBox box;
    int class_id = 0;
};

/// One scored prediction.
struct Detection {
    BBox box;
    int class_id = 0;
    double score = 0;  // confidence in [0,1]
};

/// Intersection over union; 0 when the union is empty.
double iou(const CornerBox& a, const CornerBox& b);

}  // namespace caries
