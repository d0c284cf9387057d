#include <fstream>

#include <gtest/gtest.h>

#include "caries/data/dataset.hpp"
#include "caries/error.hpp"
#include "caries/imgproc/structure.hpp"
#include "caries/spb/spb.hpp"
#include "support/oracles.hpp"

namespace ag = caries::ag;
namespace sp = caries::spb;
namespace fs = std::filesystem;

namespace {

struct Rig {
    ag::ParameterStore store;
    ag::Rng rng{3};
    caries::detector::ToyBackbone backbone{store, "backbone", 16, rng};
    sp::SpbNet net{store, "spb", 16, 8, rng};
};

std::vector<fs::path> write_corpus(const fs::path& dir, std::size_t n) {
    fs::create_directories(dir);
    std::vector<fs::path> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(dir / ("p" + std::to_string(i) + ".png"));
        caries::imgproc::write_png(out.back(), caries::data::render_synthetic(64, 1, 4, 1000 + i).image);
    }
    return out;
}

std::vector<double> snapshot(const std::vector<ag::Parameter>& ps) {
    std::vector<double> v;
    for (const auto& p : ps) v.insert(v.end(), p.tensor.data().begin(), p.tensor.data().end());
    return v;
}

}  // namespace

TEST(Spb, ForwardShapeAndChannelCheck) {
    Rig r;
    const auto out = sp::spb_forward(ag::Tensor::zeros({16, 8, 8}), r.net);
    EXPECT_EQ(out.shape(), (ag::Shape{1, 8, 8}));
    EXPECT_THROW(r.net.forward(ag::Tensor::zeros({4, 8, 8})), caries::ShapeError);
    EXPECT_EQ(r.net.parameters().size(), 6u);
}

TEST(Spb, PooledTargetIsMeanOfFullTarget) {
    const auto img = caries::data::render_synthetic(64, 1, 4, 5).image;
    const auto full = caries::imgproc::struct_target_of(img);
    const auto pooled = sp::pooled_target(img, 8);
    ASSERT_EQ(pooled.size(), 64u);
    double s = 0;
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) s += full(y, x);
    EXPECT_NEAR(pooled[0], s / 64, 1e-12);
}

TEST(Spb, PretrainReducesLossAndLeavesBackboneAlone) {
    const auto dir = oracle::scratch_dir("spb");
    Rig r;
    const auto before = snapshot(r.store.with_prefix("backbone."));
    sp::PretrainCorpus corpus{write_corpus(dir, 12), 4};
    sp::PretrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch = 4;
    std::vector<double> seen;
    const auto res = sp::pretrain(corpus, r.backbone, r.net, cfg, [&](std::size_t, double l) { seen.push_back(l); });
    ASSERT_EQ(res.loss_trace.size(), 7u);
    EXPECT_LT(res.loss_trace.back(), res.loss_trace.front());
    EXPECT_EQ(res.skipped_images, 0u);
    EXPECT_EQ(res.steps, 6u * 3u);  // 12 images / batch 4
    EXPECT_EQ(seen, res.loss_trace);  // epoch 0 reports the untrained loss
    EXPECT_EQ(snapshot(r.store.with_prefix("backbone.")), before);
    fs::remove_all(dir);
}

TEST(Spb, PretrainIsDeterministic) {
    const auto dir = oracle::scratch_dir("spbdet");
    const auto images = write_corpus(dir, 6);
    sp::PretrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 4;
    Rig a, b;
    const auto ra = sp::pretrain({images, 1}, a.backbone, a.net, cfg);
    const auto rb = sp::pretrain({images, 1}, b.backbone, b.net, cfg);
    EXPECT_EQ(ra.loss_trace, rb.loss_trace);
    EXPECT_EQ(snapshot(a.store.items()), snapshot(b.store.items()));
    fs::remove_all(dir);
}

TEST(Spb, UnreadableImagesAreSkipped) {
    const auto dir = oracle::scratch_dir("spbskip");
    auto images = write_corpus(dir, 3);
    std::ofstream(dir / "bad.png") << "not a png";
    images.push_back(dir / "bad.png");
    images.push_back(dir / "missing.png");
    Rig r;
    sp::PretrainConfig cfg;
    cfg.epochs = 1;
    EXPECT_EQ(sp::pretrain({images, 0}, r.backbone, r.net, cfg).skipped_images, 2u);

    EXPECT_THROW(sp::pretrain({{}, 0}, r.backbone, r.net, cfg), caries::ValueError);
    EXPECT_THROW(sp::pretrain({{dir / "bad.png"}, 0}, r.backbone, r.net, cfg), caries::FormatError);
    fs::remove_all(dir);
}

TEST(Spb, CorrelationIsBounded) {
    const auto dir = oracle::scratch_dir("spbcorr");
    const auto images = write_corpus(dir, 3);
    Rig r;
    const double c = sp::structural_correlation(images, r.backbone, r.net);
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
    fs::remove_all(dir);
}
