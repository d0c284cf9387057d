#include "caries/tsqi/tsqi.hpp"

#include <cmath>
#include <numbers>

namespace caries::tsqi {

ag::Tensor compute_saliency(const ag::Tensor& feat, const spb::SpbNet& net) {
    const ag::Tensor out = ag::sigmoid(net.forward(feat));
    return ag::reshape(out, {out.dim(1), out.dim(2)});
}

ag::Tensor semantic_scores(const ag::Tensor& feat, const ag::Conv2d& cls_head) {
    return ag::max_over_axis(ag::sigmoid(cls_head(feat)), 0);
}

ag::Tensor hybrid_scores(const ag::Tensor& semantic, const ag::Tensor& saliency, const ag::Tensor& lambda) {
    if (semantic.shape() != saliency.shape()) {
        throw ShapeError("hybrid_scores: " + ag::shape_str(semantic.shape()) + " vs " +
                         ag::shape_str(saliency.shape()));
    }
    if (lambda.numel() != 1) throw ShapeError("hybrid_scores: lambda must have one element");
    return semantic * (ag::reshape(lambda, {1}) * saliency + 1.0);
}

AnchorSet select_topk(const ag::Tensor& scores, std::size_t k) {
    if (scores.rank() != 2) throw ShapeError("select_topk: expected an [h,w] map");
    const std::size_t h = scores.dim(0), w = scores.dim(1);
    if (k == 0 || k > h * w) {
        throw ValueError("select_topk: K=" + std::to_string(k) + " outside [1, " + std::to_string(h * w) + "]");
    }
    AnchorSet set;
    set.height = h;
    set.width = w;
    set.flat_indices = ag::topk_indices(scores.detach(), k);
    for (std::size_t idx : set.flat_indices) {
        Anchor a;
        a.gy = idx / w;
        a.gx = idx % w;
        a.cx = (static_cast<double>(a.gx) + 0.5) / static_cast<double>(w);
        a.cy = (static_cast<double>(a.gy) + 0.5) / static_cast<double>(h);
        set.anchors.push_back(a);
    }
    set.scores = ag::gather(ag::reshape(scores, {h * w}), 0, set.flat_indices);
    return set;
}

std::vector<double> positional_encoding(double cx, double cy, std::size_t d_pe) {
    if (d_pe == 0 || d_pe % 4 != 0) throw ValueError("positional_encoding: d_pe must be a positive multiple of 4");
    const std::size_t per_axis = d_pe / 2;
    std::vector<double> out(d_pe);
    const double coords[2] = {cx, cy};
    for (std::size_t axis = 0; axis < 2; ++axis) {
        for (std::size_t i = 0; i < per_axis / 2; ++i) {
            const double freq = std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(per_axis));
            const double arg = 2.0 * std::numbers::pi * coords[axis] / freq;
            out[axis * per_axis + 2 * i] = std::sin(arg);
            out[axis * per_axis + 2 * i + 1] = std::cos(arg);
        }
    }
    return out;
}

ag::Tensor positional_encoding(const std::vector<double>& cx, const std::vector<double>& cy, std::size_t d_pe) {
    if (cx.size() != cy.size()) throw ShapeError("positional_encoding: coordinate count mismatch");
    std::vector<double> all;
    all.reserve(cx.size() * d_pe);
    for (std::size_t i = 0; i < cx.size(); ++i) {
        const auto pe = positional_encoding(cx[i], cy[i], d_pe);
        all.insert(all.end(), pe.begin(), pe.end());
    }
    return ag::Tensor::from({cx.size(), d_pe}, std::move(all));
}

QuerySet build_queries(const AnchorSet& anchors, const ag::Linear& psi, std::size_t d_pe, double ref_size) {
    const std::size_t k = anchors.size();
    if (k == 0) throw ValueError("build_queries: empty anchor set");
    std::vector<double> cx(k), cy(k);
    QuerySet q;
    for (std::size_t i = 0; i < k; ++i) {
        cx[i] = anchors.anchors[i].cx;
        cy[i] = anchors.anchors[i].cy;
        q.reference.push_back({cx[i], cy[i], ref_size, ref_size});
    }
    const ag::Tensor pe = positional_encoding(cx, cy, d_pe);
    const ag::Tensor v = ag::reshape(anchors.scores, {k, 1});
    q.embeddings = psi(ag::concat({pe, v}, 1));
    return q;
}

}  // namespace caries::tsqi
