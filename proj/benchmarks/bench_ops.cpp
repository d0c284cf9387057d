#include <random>

#include <benchmark/benchmark.h>

#include "caries/autograd/ops.hpp"
#include "caries/imgproc/structure.hpp"

namespace ag = caries::ag;

namespace {

ag::Tensor random(ag::Shape s, std::uint64_t seed, bool grad = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(ag::numel_of(s));
    for (auto& x : v) x = u(rng);
    return ag::Tensor::from(s, v, grad);
}

// args: channels in/out, spatial size
void BM_Conv2dForward(benchmark::State& st) {
    const auto c = static_cast<std::size_t>(st.range(0)), hw = static_cast<std::size_t>(st.range(1));
    const auto x = random({c, hw, hw}, 1), w = random({c, c, 3, 3}, 2);
    ag::NoGradGuard guard;
    for (auto _ : st) benchmark::DoNotOptimize(ag::conv2d(x, w, 1, 1));
}
BENCHMARK(BM_Conv2dForward)->Args({16, 32})->Args({32, 16})->Args({64, 8});

void BM_Conv2dBackward(benchmark::State& st) {
    const auto c = static_cast<std::size_t>(st.range(0)), hw = static_cast<std::size_t>(st.range(1));
    auto x = random({c, hw, hw}, 1, true), w = random({c, c, 3, 3}, 2, true);
    for (auto _ : st) {
        x.zero_grad();
        w.zero_grad();
        ag::sum(ag::conv2d(x, w, 1, 1)).backward();
    }
}
BENCHMARK(BM_Conv2dBackward)->Args({16, 32})->Args({64, 8});

void BM_Matmul(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    auto a = random({n, n}, 3, true), b = random({n, n}, 4, true);
    for (auto _ : st) {
        a.zero_grad();
        b.zero_grad();
        ag::sum(ag::matmul(a, b)).backward();
    }
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_StructTarget(benchmark::State& st) {
    caries::imgproc::RgbImage img(64, 64);
    std::mt19937_64 rng(5);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 255);
    for (auto _ : st) benchmark::DoNotOptimize(caries::imgproc::struct_target_of(img));
}
BENCHMARK(BM_StructTarget);

}  // namespace
