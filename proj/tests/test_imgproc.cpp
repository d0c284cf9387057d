#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "caries/autograd/ops.hpp"
#include "caries/imgproc/structure.hpp"
#include "support/oracles.hpp"

namespace ag = caries::ag;
namespace ip = caries::imgproc;

namespace {

ip::RgbImage random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    ip::RgbImage img(h, w);
    std::uniform_int_distribution<int> d(0, 255);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(d(rng));
    return img;
}

ip::GrayMap random_gray(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    ip::GrayMap g(h, w);
    std::uniform_real_distribution<double> d(0, 1);
    for (auto& v : g.values) v = d(rng);
    return g;
}

}  // namespace

TEST(Conv2d, MatchesNestedLoopOracle) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    std::uniform_int_distribution<std::size_t> dim(3, 9), ch(1, 3), k(1, 3), st(1, 2), pd(0, 2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t cin = ch(rng), cout = ch(rng), h = dim(rng), w = dim(rng), kk = k(rng), s = st(rng), p = pd(rng);
        const bool rep = trial % 2 == 1;
        std::vector<double> x(cin * h * w), wt(cout * cin * kk * kk);
        for (auto& v : x) v = u(rng);
        for (auto& v : wt) v = u(rng);
        std::size_t ho, wo;
        const auto want = oracle::conv2d(x, cin, h, w, wt, cout, kk, s, p, rep, ho, wo);
        const auto got = ag::conv2d(ag::Tensor::from({cin, h, w}, x), ag::Tensor::from({cout, cin, kk, kk}, wt), s, p,
                                    rep ? ag::PadMode::Replicate : ag::PadMode::Zero);
        ASSERT_EQ(got.shape(), (ag::Shape{cout, ho, wo}));
        for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(got.at(i), want[i], 1e-12) << "trial " << trial;
    }
}

TEST(Conv2d, IdentityKernelIsIdentity) {
    ag::Tensor x = ag::Tensor::from({1, 2, 2}, {1, 2, 3, 4});
    ag::Tensor w = ag::Tensor::from({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    const auto y = ag::conv2d(x, w, 1, 1);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Conv2d, ChannelMismatchThrows) {
    EXPECT_THROW(ag::conv2d(ag::Tensor::zeros({2, 4, 4}), ag::Tensor::zeros({1, 3, 3, 3})), caries::ShapeError);
}

TEST(Scharr, MatchesOracle) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> dim(3, 12);
    for (int trial = 0; trial < 50; ++trial) {
        const auto g = random_gray(dim(rng), dim(rng), rng);
        const auto want = oracle::scharr(g.values, g.height, g.width);
        const auto got = ip::scharr_magnitude(g);
        for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(got.values[i], want[i], 1e-12);
    }
}

TEST(Scharr, RejectsImagesSmallerThanKernel) {
    EXPECT_THROW(ip::scharr_magnitude(ip::GrayMap(2, 5)), caries::ShapeError);
}

TEST(Scharr, ConstantImageHasNoGradient) {
    ip::GrayMap g(5, 7, 0.4);
    for (double v : ip::scharr_magnitude(g).values) EXPECT_EQ(v, 0.0);
}

TEST(Scharr, VerticalStepResponse) {
    // Left half 0, right half 1: |Gx| = 3+10+3 = 16 on both columns next to the step.
    ip::GrayMap g(4, 4);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 2; x < 4; ++x) g(y, x) = 1.0;
    const auto m = ip::scharr_magnitude(g);
    EXPECT_DOUBLE_EQ(m(1, 1), 16.0);
    EXPECT_DOUBLE_EQ(m(1, 2), 16.0);
    EXPECT_DOUBLE_EQ(m(1, 0), 0.0);
}

TEST(Grayscale, LumaWeights) {
    ip::RgbImage img(1, 3);
    const std::uint8_t px[] = {255, 0, 0, 0, 255, 0, 0, 0, 255};
    std::copy(std::begin(px), std::end(px), img.pixels.begin());
    const auto g = ip::to_grayscale(img);
    EXPECT_NEAR(g.values[0], 0.299, 1e-12);
    EXPECT_NEAR(g.values[1], 0.587, 1e-12);
    EXPECT_NEAR(g.values[2], 0.114, 1e-12);
}

TEST(StructTarget, RangeAndRankOrder) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        auto grad = ip::scharr_magnitude(random_gray(8, 8, rng));
        const auto t = ip::make_struct_target(grad);
        const auto [mn, mx] = std::minmax_element(t.values.begin(), t.values.end());
        EXPECT_EQ(*mn, 0.0);
        EXPECT_EQ(*mx, 1.0);
        for (std::size_t i = 0; i < t.size(); ++i)
            for (std::size_t j = 0; j < t.size(); ++j)
                if (grad.values[i] < grad.values[j]) ASSERT_LE(t.values[i], t.values[j]);
    }
}

TEST(StructTarget, ConstantInputIsAllZero) {
    for (double v : ip::make_struct_target(ip::GradientMap(4, 4, 2.5)).values) EXPECT_EQ(v, 0.0);
}

TEST(Downsample, MeanPoolingAndErrors) {
    ip::StructTarget t(2, 4);
    for (std::size_t i = 0; i < 8; ++i) t.values[i] = static_cast<double>(i);
    const auto d = ip::downsample_avg(t, 2);
    EXPECT_EQ(d.height, 1u);
    EXPECT_DOUBLE_EQ(d(0, 0), (0 + 1 + 4 + 5) / 4.0);
    EXPECT_DOUBLE_EQ(d(0, 1), (2 + 3 + 6 + 7) / 4.0);
    EXPECT_THROW(ip::downsample_avg(t, 3), caries::ShapeError);
}

TEST(Png, RoundTripAndFlip) {
    std::mt19937_64 rng(1);
    const auto img = random_image(5, 7, rng);
    const auto dir = oracle::scratch_dir("png");
    ip::write_png(dir / "a.png", img);
    const auto back = ip::read_png(dir / "a.png");
    EXPECT_EQ(back.pixels, img.pixels);
    const auto f = ip::flip_horizontal(img);
    EXPECT_EQ(f.at(2, 0)[1], img.at(2, 6)[1]);
    EXPECT_EQ(ip::flip_horizontal(f).pixels, img.pixels);
    EXPECT_THROW(ip::read_png(dir / "missing.png"), caries::FormatError);
    std::filesystem::remove_all(dir);
}

TEST(StructTarget, CommutesWithHorizontalFlip) {
    std::mt19937_64 rng(2);
    const auto img = random_image(6, 9, rng);
    const auto a = ip::struct_target_of(ip::flip_horizontal(img));
    const auto b = ip::struct_target_of(img);
    for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 9; ++x) EXPECT_NEAR(a(y, x), b(y, 8 - x), 1e-12);
}
