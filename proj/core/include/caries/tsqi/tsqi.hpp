#pragma once

#include <cstddef>
#include <vector>

#include "caries/autograd/nn.hpp"
#include "caries/box.hpp"
#include "caries/spb/spb.hpp"

namespace caries::tsqi {

/// sigmoid(spb(feat)) as an [h,w] map in (0,1).
ag::Tensor compute_saliency(const ag::Tensor& feat, const spb::SpbNet& net);

/// Per-location max over classes of sigmoid(cls_head(feat)), [h,w].
ag::Tensor semantic_scores(const ag::Tensor& feat, const ag::Conv2d& cls_head);

/// S_sem * (1 + lambda * P). `lambda` is a one-element tensor.
ag::Tensor hybrid_scores(const ag::Tensor& semantic, const ag::Tensor& saliency, const ag::Tensor& lambda);

struct Anchor {
    std::size_t gx = 0, gy = 0;
    double cx = 0, cy = 0;  // normalized cell center
};

/// Top-K locations of a score map. `scores` holds the selected values,
/// gathered so that gradients reach the map.
struct AnchorSet {
    std::vector<Anchor> anchors;
    std::vector<std::size_t> flat_indices;
    ag::Tensor scores;  // [K]
    std::size_t height = 0, width = 0;

    std::size_t size() const { return anchors.size(); }
};

/// Selection runs on detached values: descending score, ties by ascending
/// row-major index. Throws ValueError unless 1 <= k <= h*w.
AnchorSet select_topk(const ag::Tensor& scores, std::size_t k);

/// Sinusoidal 2D encoding: d_pe/2 dims per axis (x first), each as
/// interleaved sin/cos of 2*pi*c / 10000^(2i/(d_pe/2)). d_pe must be a
/// positive multiple of 4.
std::vector<double> positional_encoding(double cx, double cy, std::size_t d_pe);

/// [n, d_pe] encodings of the given centers.
ag::Tensor positional_encoding(const std::vector<double>& cx, const std::vector<double>& cy, std::size_t d_pe);

struct QuerySet {
    ag::Tensor embeddings;        // [K, d_model]
    std::vector<BBox> reference;  // initial reference boxes
};

/// q_i = psi([PE(c_i), v_i]); reference boxes are centered on the anchors
/// with side `ref_size`.
QuerySet build_queries(const AnchorSet& anchors, const ag::Linear& psi, std::size_t d_pe, double ref_size);

}  // namespace caries::tsqi
