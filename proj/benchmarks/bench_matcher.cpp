#include <random>

#include <benchmark/benchmark.h>

#include "caries/matcher/matcher.hpp"

namespace {

// args: queries, ground truths
void BM_Hungarian(benchmark::State& st) {
    const auto rows = static_cast<std::size_t>(st.range(0)), cols = static_cast<std::size_t>(st.range(1));
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-3, 3);
    caries::matcher::CostMatrix c(rows, cols);
    for (auto& v : c.values) v = u(rng);
    for (auto _ : st) benchmark::DoNotOptimize(caries::matcher::hungarian(c));
}
BENCHMARK(BM_Hungarian)->Args({16, 4})->Args({64, 16})->Args({300, 50});

}  // namespace
