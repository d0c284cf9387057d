#include <benchmark/benchmark.h>

#include "caries/data/dataset.hpp"
#include "caries/detector/trainer.hpp"

namespace dt = caries::detector;

namespace {

void BM_DetectorForward(benchmark::State& st) {
    const dt::Detector model(dt::ModelConfig{}, 0);
    const auto s = caries::data::render_synthetic(64, 1, 4, 1);
    const auto img = dt::image_tensor(s.image);
    caries::ag::NoGradGuard guard;
    for (auto _ : st) benchmark::DoNotOptimize(model.forward(img));
}
BENCHMARK(BM_DetectorForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& st) {
    dt::Detector model(dt::ModelConfig{}, 0);
    dt::TrainConfig cfg;
    std::vector<dt::Sample> batch;
    for (std::uint64_t i = 0; i < cfg.batch; ++i) {
        const auto s = caries::data::render_synthetic(64, 1, 4, i);
        batch.push_back(dt::make_sample(s.image, s.objects, false));
    }
    caries::ag::AdamW opt(model.trainable(false), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    std::size_t iter = 0;
    for (auto _ : st) benchmark::DoNotOptimize(dt::train_step(batch, model, opt, cfg, iter++));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
