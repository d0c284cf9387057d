#include <random>

#include <gtest/gtest.h>

#include "caries/error.hpp"
#include "caries/eval/evaluator.hpp"
#include "support/oracles.hpp"

namespace ev = caries::eval;
using caries::BBox;
using caries::CornerBox;
using caries::Detection;
using caries::Object;

namespace {

BBox corner(double x1, double y1, double x2, double y2) { return BBox::from_corners({x1, y1, x2, y2}); }

struct RandomSet {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<Object>> gts;
};

RandomSet random_set(std::mt19937_64& rng, std::size_t images, std::size_t classes) {
    std::uniform_real_distribution<double> u(0, 1), size(0.05, 0.4), jitter(-0.08, 0.08), score(0, 1);
    std::uniform_int_distribution<int> cls(0, static_cast<int>(classes) - 1), count(0, 4);
    RandomSet s;
    s.dets.resize(images);
    s.gts.resize(images);
    for (std::size_t i = 0; i < images; ++i) {
        for (int g = count(rng); g > 0; --g) {
            const BBox b{u(rng), u(rng), size(rng), size(rng)};
            const int c = cls(rng);
            s.gts[i].push_back({b, c});
            if (u(rng) < 0.7) {
                s.dets[i].push_back({{b.cx + jitter(rng), b.cy + jitter(rng), b.w * (1 + jitter(rng)), b.h * (1 + jitter(rng))},
                                     u(rng) < 0.8 ? c : cls(rng), score(rng)});
            }
        }
        for (int f = count(rng); f > 0; --f) s.dets[i].push_back({{u(rng), u(rng), size(rng), size(rng)}, cls(rng), score(rng)});
    }
    return s;
}

std::optional<double> oracle_ap(const RandomSet& s, int cls, double thr) {
    std::vector<oracle::Det> d;
    std::vector<oracle::Gt> g;
    auto box = [](const BBox& b) {
        const CornerBox c = b.corners();
        return oracle::Box{c.x1, c.y1, c.x2, c.y2};
    };
    for (std::size_t i = 0; i < s.dets.size(); ++i) {
        for (const auto& x : s.dets[i])
            if (x.class_id == cls) d.push_back({i, box(x.box), x.score});
        for (const auto& x : s.gts[i])
            if (x.class_id == cls) g.push_back({i, box(x.box)});
    }
    return oracle::average_precision(d, g, thr);
}

}  // namespace

TEST(IoU, HandValues) {
    EXPECT_DOUBLE_EQ(ev::iou_xyxy({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
    EXPECT_DOUBLE_EQ(ev::iou_xyxy({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
    EXPECT_NEAR(ev::iou_xyxy({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-15);
    EXPECT_EQ(ev::iou_xyxy({0, 0, 0, 0}, {0, 0, 0, 0}), 0.0);
}

TEST(Thresholds, TenSteps) {
    const auto t = ev::iou_thresholds();
    EXPECT_DOUBLE_EQ(t.front(), 0.5);
    EXPECT_DOUBLE_EQ(t[5], 0.75);
    EXPECT_DOUBLE_EQ(t.back(), 0.95);
}

TEST(AP, HandCases) {
    // IoU exactly 0.6: gt [0,0,1,0.625], det [0,0,1,0.375].
    const std::vector<ev::GtBox> one_gt{{0, corner(0, 0, 1, 0.625)}};
    const std::vector<ev::ScoredBox> one_det{{0, corner(0, 0, 1, 0.375), 0.9}};
    EXPECT_DOUBLE_EQ(*ev::ap_per_class(one_det, one_gt, 0.5), 1.0);
    EXPECT_DOUBLE_EQ(*ev::ap_per_class(one_det, one_gt, 0.75), 0.0);

    // Two gts, one perfect detection: recall tops out at 0.5, so 51 of the
    // 101 recall points see precision 1.
    const std::vector<ev::GtBox> two{{0, corner(0, 0, 1, 1)}, {0, corner(2, 2, 3, 3)}};
    const std::vector<ev::ScoredBox> det{{0, corner(0, 0, 1, 1), 0.5}};
    EXPECT_DOUBLE_EQ(*ev::ap_per_class(det, two, 0.5), 51.0 / 101.0);

    EXPECT_FALSE(ev::ap_per_class({}, {}, 0.5).has_value());
    EXPECT_EQ(*ev::ap_per_class(one_det, {}, 0.5), 0.0);
    EXPECT_EQ(*ev::ap_per_class({}, one_gt, 0.5), 0.0);
}

TEST(Evaluate, SinglePairAtIoU06GivesPointThree) {
    std::vector<std::vector<Object>> gts{{{corner(0, 0, 1, 0.625), 0}}};
    std::vector<std::vector<Detection>> dets{{{corner(0, 0, 1, 0.375), 0, 0.8}}};
    const auto r = ev::evaluate(dets, gts, 2);
    EXPECT_DOUBLE_EQ(r.per_class[0].ap_mean, 0.3);
    EXPECT_DOUBLE_EQ(r.map, 0.3);  // class 1 has no gt and is excluded
    EXPECT_DOUBLE_EQ(r.map50, 1.0);
    EXPECT_DOUBLE_EQ(r.map75, 0.0);
    EXPECT_FALSE(r.per_class[1].has_gt);
}

TEST(Evaluate, PerfectDetectionsGiveOne) {
    std::mt19937_64 rng(4);
    auto s = random_set(rng, 10, 3);
    for (std::size_t i = 0; i < s.gts.size(); ++i) {
        s.dets[i].clear();
        for (const auto& g : s.gts[i]) s.dets[i].push_back({g.box, g.class_id, 0.9});
    }
    const auto r = ev::evaluate(s.dets, s.gts, 3);
    EXPECT_DOUBLE_EQ(r.map, 1.0);
}

TEST(Evaluate, MatchesBruteForceOracle) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = random_set(rng, 8, 3);
        const auto r = ev::evaluate(s.dets, s.gts, 3);
        const auto th = ev::iou_thresholds();
        for (int c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < th.size(); ++t) {
                const auto want = oracle_ap(s, c, th[t]);
                const auto& got = r.per_class[static_cast<std::size_t>(c)].ap[t];
                ASSERT_EQ(want.has_value(), got.has_value());
                if (want) ASSERT_NEAR(*got, *want, 1e-6) << "trial " << trial << " class " << c << " thr " << th[t];
            }
    }
}

TEST(Evaluate, MonotoneInThresholdAndScoreScaleInvariant) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        auto s = random_set(rng, 6, 2);
        const auto r = ev::evaluate(s.dets, s.gts, 2);
        for (const auto& c : r.per_class) {
            if (!c.has_gt) continue;
            for (std::size_t t = 1; t < ev::kNumThresholds; ++t) EXPECT_LE(*c.ap[t], *c.ap[t - 1] + 1e-15);
        }
        for (auto& d : s.dets)
            for (auto& x : d) x.score *= 0.37;
        const auto r2 = ev::evaluate(s.dets, s.gts, 2);
        EXPECT_DOUBLE_EQ(r.map, r2.map);
    }
}

TEST(Evaluate, DuplicateDetectionCannotRaiseAP) {
    std::vector<std::vector<Object>> gts{{{corner(0, 0, 1, 1), 0}, {corner(2, 2, 3, 3), 0}}};
    std::vector<std::vector<Detection>> dets{{{corner(0, 0, 1, 1), 0, 0.9}}};
    const double base = ev::evaluate(dets, gts, 1).map;
    dets[0].push_back({corner(0, 0, 1, 1.02), 0, 0.5});
    EXPECT_LE(ev::evaluate(dets, gts, 1).map, base + 1.0 / 101.0);
}

TEST(Evaluate, ClassOutOfRangeThrows) {
    std::vector<std::vector<Object>> gts{{{corner(0, 0, 1, 1), 3}}};
    std::vector<std::vector<Detection>> dets{{}};
    EXPECT_THROW(ev::evaluate(dets, gts, 2), caries::ValueError);
}

TEST(Report, JsonAndTable) {
    std::vector<std::vector<Object>> gts{{{corner(0, 0, 1, 1), 0}}};
    std::vector<std::vector<Detection>> dets{{{corner(0, 0, 1, 1), 0, 0.9}}};
    const auto r = ev::evaluate(dets, gts, 1);
    const auto j = ev::to_json(r, {"lesion"});
    EXPECT_DOUBLE_EQ(j["map"].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(j["per_class"]["lesion"]["ap50"].get<double>(), 1.0);
    EXPECT_NE(ev::format_table(r, {"lesion"}).find("lesion"), std::string::npos);
}
