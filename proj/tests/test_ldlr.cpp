#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "caries/autograd/gradcheck.hpp"
#include "caries/autograd/ops.hpp"
#include "caries/error.hpp"
#include "caries/ldlr/box_loss.hpp"
#include "caries/ldlr/loss.hpp"

namespace ag = caries::ag;
namespace ld = caries::ldlr;
namespace mt = caries::matcher;
using caries::BBox;
using caries::CornerBox;
using caries::Object;

TEST(HardnessWeight, Endpoints) {
    for (double eta : {0.0, 0.5, 1.0, 2.0, 7.25}) {
        EXPECT_EQ(ld::hardness_weight(1.0, eta), 1.0);
        EXPECT_EQ(ld::hardness_weight(0.0, eta), 1.0 + eta);
    }
    EXPECT_EQ(ld::hardness_weight(0.5, 1.0), 1.5);
    EXPECT_EQ(ld::hardness_weight(0.0, 2.0), 3.0);
    EXPECT_THROW(ld::hardness_weight(0.5, -1.0), caries::ValueError);
}

TEST(HardnessWeight, StrictlyDecreasingAndBounded) {
    for (double eta : {0.1, 1.0, 3.0}) {
        double prev = ld::hardness_weight(0.0, eta);
        for (int i = 1; i <= 1000; ++i) {
            const double w = ld::hardness_weight(i / 1000.0, eta);
            EXPECT_LT(w, prev);
            EXPECT_GE(w, 1.0);
            EXPECT_LE(w, 1.0 + eta);
            prev = w;
        }
    }
}

TEST(HardnessWeight, OutOfRangeIsClampedAndCounted) {
    ld::reset_hardness_clamp_count();
    EXPECT_EQ(ld::hardness_weight(1.5, 1.0), 1.0);
    EXPECT_EQ(ld::hardness_weight(-0.5, 1.0), 2.0);
    EXPECT_EQ(ld::hardness_clamp_count(), 2u);
    ld::hardness_weight(0.3, 1.0);
    EXPECT_EQ(ld::hardness_clamp_count(), 2u);
}

TEST(Giou, UnitValues) {
    EXPECT_DOUBLE_EQ(ld::giou(CornerBox{0, 0, 2, 2}, CornerBox{0, 0, 2, 2}), 1.0);
    EXPECT_NEAR(ld::giou(CornerBox{0, 0, 2, 2}, CornerBox{1, 1, 3, 3}), -5.0 / 63.0, 1e-9);
    EXPECT_NEAR(ld::giou(CornerBox{0, 0, 1, 1}, CornerBox{2, 0, 3, 1}), -1.0 / 3.0, 1e-9);
    EXPECT_EQ(ld::giou(CornerBox{0, 0, 0, 0}, CornerBox{0, 0, 0, 0}), 0.0);
}

TEST(Giou, TensorFormAgreesWithScalar) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> c(0.2, 0.8), s(0.05, 0.5);
    std::vector<double> a, b;
    std::vector<BBox> ba, bb;
    for (int i = 0; i < 30; ++i) {
        ba.push_back({c(rng), c(rng), s(rng), s(rng)});
        bb.push_back({c(rng), c(rng), s(rng), s(rng)});
        a.insert(a.end(), {ba.back().cx, ba.back().cy, ba.back().w, ba.back().h});
        b.insert(b.end(), {bb.back().cx, bb.back().cy, bb.back().w, bb.back().h});
    }
    const auto ta = ag::Tensor::from({30, 4}, a), tb = ag::Tensor::from({30, 4}, b);
    const auto g = ld::giou(ta, tb), l = ld::l1_box_loss(ta, tb);
    for (std::size_t i = 0; i < 30; ++i) {
        EXPECT_NEAR(g.at(i), ld::giou(ba[i], bb[i]), 1e-12);
        EXPECT_NEAR(l.at(i), ld::l1_box_loss(ba[i], bb[i]), 1e-12);
        EXPECT_GT(g.at(i), -1.0);
        EXPECT_LE(g.at(i), 1.0);
    }
}

TEST(L1, Values) {
    const BBox a{0.5, 0.5, 0.2, 0.2}, b{0.6, 0.5, 0.2, 0.2};
    EXPECT_EQ(ld::l1_box_loss(a, a), 0.0);
    EXPECT_NEAR(ld::l1_box_loss(a, b), 0.1, 1e-15);
    EXPECT_EQ(ld::l1_box_loss(a, b), ld::l1_box_loss(b, a));
}

TEST(Focal, HandValues) {
    const ld::FocalConfig cfg{0.25, 2.0};
    const double x = std::log(9.0);  // sigmoid = 0.9
    EXPECT_NEAR(ld::focal_loss(std::vector<double>{x}, 0, cfg), 0.25 * 0.01 * -std::log(0.9), 1e-15);
    EXPECT_NEAR(ld::focal_loss(std::vector<double>{40.0, -40.0}, 0, cfg), 0.0, 1e-30);
    EXPECT_THROW(ld::focal_loss(std::vector<double>{0.0}, 1, cfg), caries::ValueError);
    EXPECT_THROW(ld::focal_loss(std::vector<double>{0.0}, -2, cfg), caries::ValueError);
}

TEST(Focal, ReducesToHalfBce) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 3);
    const ld::FocalConfig cfg{0.5, 0.0};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> logits(4);
        for (auto& v : logits) v = n(rng);
        const int target = static_cast<int>(rng() % 5) - 1;
        double bce = 0;
        for (int c = 0; c < 4; ++c) {
            const double p = 1 / (1 + std::exp(-logits[c]));
            bce += c == target ? -std::log(p) : -std::log(1 - p);
        }
        EXPECT_NEAR(ld::focal_loss(logits, target, cfg), 0.5 * bce, 1e-12);
        const auto t = ld::focal_loss(ag::Tensor::from({1, 4}, logits), {target}, cfg);
        EXPECT_NEAR(t.at(0), 0.5 * bce, 1e-12);
    }
}

TEST(Quality, Values) {
    const BBox a{0.25, 0.25, 0.5, 0.5}, b{0.5, 0.5, 0.5, 0.5};
    const auto perfect = ld::quality_vector(0.7, a, a);
    EXPECT_EQ(perfect.cls, 0.7);
    EXPECT_EQ(perfect.bbox, 1.0);
    EXPECT_EQ(perfect.iou, 1.0);
    const auto q = ld::quality_vector(0.9, a, b);
    EXPECT_NEAR(q.iou, 1.0 / 7.0, 1e-12);
    EXPECT_NEAR(q.bbox, std::exp(-0.5), 1e-12);
}

namespace {

struct Fixture {
    ag::Tensor logits, boxes;
    std::vector<Object> gts;
    mt::MatchResult matches;
};

// One matched query (p = 0.9, corners [0,0,.5,.5] vs gt [.25,.25,.75,.75])
// and one unmatched query, single class.
Fixture hand_fixture() {
    Fixture f;
    f.logits = ag::Tensor::from({2, 1}, {std::log(9.0), -1.0});
    f.boxes = ag::Tensor::from({2, 4}, {0.25, 0.25, 0.5, 0.5, 0.7, 0.7, 0.1, 0.1});
    f.gts = {{{0.5, 0.5, 0.5, 0.5}, 0}};
    f.matches.pairs = {{0, 0}};
    f.matches.unmatched = {1};
    return f;
}

}  // namespace

TEST(TotalLoss, HandComputedWeightedSum) {
    const auto f = hand_fixture();
    const ld::FocalConfig focal;
    const auto r = ld::total_loss(f.matches, f.logits, f.boxes, f.gts, {1, 1, 1}, focal);
    const double w_cls = 1 + (1 - 0.9), w_bbox = 2 - std::exp(-0.5), w_iou = 2 - 1.0 / 7.0;
    const double pos_focal = 0.25 * 0.01 * -std::log(0.9);
    const double p1 = 1 / (1 + std::exp(1.0));
    const double bg = 0.75 * p1 * p1 * -std::log(1 - p1);
    const double want = w_cls * pos_focal + bg + w_bbox * 0.5 + w_iou * (1 + 5.0 / 63.0);
    EXPECT_NEAR(r.total_value, want, 1e-9);
    EXPECT_NEAR(r.cls, w_cls * pos_focal + bg, 1e-12);
    EXPECT_NEAR(r.bbox, w_bbox * 0.5, 1e-12);
    EXPECT_NEAR(r.giou, w_iou * (1 + 5.0 / 63.0), 1e-9);
    ASSERT_EQ(r.weights.size(), 1u);
    EXPECT_NEAR(r.weights[0].cls, w_cls, 1e-12);
    EXPECT_EQ(r.num_pos, 1u);
}

TEST(TotalLoss, ZeroSensitivityIsUnweighted) {
    const auto f = hand_fixture();
    const auto r = ld::total_loss(f.matches, f.logits, f.boxes, f.gts, {0, 0, 0}, {});
    EXPECT_EQ(r.weights[0].cls, 1.0);
    EXPECT_EQ(r.weights[0].bbox, 1.0);
    EXPECT_EQ(r.weights[0].iou, 1.0);
    EXPECT_NEAR(r.bbox, 0.5, 1e-15);
}

TEST(TotalLoss, PerfectMatchLeavesOnlyFocal) {
    auto f = hand_fixture();
    f.boxes = ag::Tensor::from({2, 4}, {0.5, 0.5, 0.5, 0.5, 0.7, 0.7, 0.1, 0.1});
    const auto r = ld::total_loss(f.matches, f.logits, f.boxes, f.gts, {1, 1, 1}, {});
    EXPECT_EQ(r.bbox, 0.0);
    EXPECT_NEAR(r.giou, 0.0, 1e-15);
    EXPECT_NEAR(r.total_value, r.cls, 1e-15);
}

TEST(TotalLoss, DegradingOverlapNeverLowersLoss) {
    auto f = hand_fixture();
    double prev = -1;
    for (double cx : {0.5, 0.45, 0.4, 0.3, 0.2, 0.1}) {
        f.boxes = ag::Tensor::from({2, 4}, {cx, 0.5, 0.5, 0.5, 0.7, 0.7, 0.1, 0.1});
        const double v = ld::total_loss(f.matches, f.logits, f.boxes, f.gts, {1, 1, 1}, {}).total_value;
        EXPECT_GE(v, prev);
        prev = v;
    }
}

TEST(TotalLoss, GradientWithWeightsHeldConstant) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> c(0.3, 0.7), s(0.1, 0.3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> lv(4 * 3), bv;
        for (auto& v : lv) v = n(rng);
        for (int q = 0; q < 4; ++q) bv.insert(bv.end(), {c(rng), c(rng), s(rng), s(rng)});
        std::vector<Object> gts{{{c(rng), c(rng), s(rng), s(rng)}, 1}, {{c(rng), c(rng), s(rng), s(rng)}, 2}};
        mt::MatchResult m;
        m.pairs = {{2, 0}, {0, 1}};
        m.unmatched = {1, 3};
        const ld::SensitivityConfig eta{1.0, 0.5, 2.0};

        auto logits = ag::Tensor::from({4, 3}, lv, true);
        auto boxes = ag::Tensor::from({4, 4}, bv, true);
        auto base = ld::total_loss(m, logits, boxes, gts, eta, {});
        base.total.backward();

        // Frozen-weight objective evaluated in plain doubles.
        auto frozen = [&](const std::vector<double>& L, const std::vector<double>& B) {
            double total = 0;
            for (std::size_t k = 0; k < m.pairs.size(); ++k) {
                const auto [q, g] = m.pairs[k];
                const auto& w = base.weights[k];
                const std::vector<double> row(L.begin() + 3 * q, L.begin() + 3 * q + 3);
                const BBox pb{B[4 * q], B[4 * q + 1], B[4 * q + 2], B[4 * q + 3]};
                total += w.cls * ld::focal_loss(row, gts[g].class_id, {}) + w.bbox * ld::l1_box_loss(pb, gts[g].box) +
                         w.iou * (1 - ld::giou(pb, gts[g].box));
            }
            for (auto q : m.unmatched) total += ld::focal_loss(std::vector<double>(L.begin() + 3 * q, L.begin() + 3 * q + 3), -1, {});
            return total;
        };
        const double eps = 1e-6;
        for (std::size_t i = 0; i < lv.size(); ++i) {
            auto up = lv, dn = lv;
            up[i] += eps;
            dn[i] -= eps;
            const double num = (frozen(up, bv) - frozen(dn, bv)) / (2 * eps);
            ASSERT_LT(ag::relative_error(logits.grad()[i], num), 1e-4) << "logit " << i;
        }
        for (std::size_t i = 0; i < bv.size(); ++i) {
            auto up = bv, dn = bv;
            up[i] += eps;
            dn[i] -= eps;
            const double num = (frozen(lv, up) - frozen(lv, dn)) / (2 * eps);
            ASSERT_LT(ag::relative_error(boxes.grad()[i], num), 1e-4) << "box " << i;
        }
    }
}

TEST(TotalLoss, IndexErrors) {
    auto f = hand_fixture();
    f.matches.pairs = {{5, 0}};
    EXPECT_THROW(ld::total_loss(f.matches, f.logits, f.boxes, f.gts, {}, {}), caries::ValueError);
    f = hand_fixture();
    f.matches.unmatched = {9};
    EXPECT_THROW(ld::total_loss(f.matches, f.logits, f.boxes, f.gts, {}, {}), caries::ValueError);
    f = hand_fixture();
    EXPECT_THROW(ld::total_loss(f.matches, f.logits, ag::Tensor::zeros({3, 4}), f.gts, {}, {}), caries::ShapeError);
}
