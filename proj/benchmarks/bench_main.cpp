#include <benchmark/benchmark.h>

#include "ustep/data.hpp"
#include "ustep/metrics.hpp"
#include "ustep/model.hpp"
#include "ustep/optim.hpp"

using namespace ustep;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Xoshiro256& rng, bool requires_grad = false) {
    int64_t n = 1;
    for (int64_t d : shape) {
        n *= d;
    }
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) {
        x = rng.uniform(-0.5, 0.5);
    }
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

UstepConfig bench_config() {
    UstepConfig cfg;
    cfg.delta_t = 2;
    cfg.delta_T = 4;
    cfg.height = 16;
    cfg.width = 16;
    cfg.hidden = 8;
    return cfg;
}

FrameSequence bench_sequence(uint64_t seed) {
    GenConfig gen;
    gen.num_sequences = 1;
    gen.observed = 4;
    gen.horizon = 4;
    gen.seed = seed;
    return generate(gen).sequence(0);
}

void BM_Conv2dForward(benchmark::State& state) {
    const int64_t c = state.range(0);
    Xoshiro256 rng(1);
    Tensor in = random_tensor({c, 16, 16}, rng);
    Tensor w = random_tensor({c, c, 3, 3}, rng);
    Tensor b = random_tensor({c}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv2d(in, w, b));
    }
}
BENCHMARK(BM_Conv2dForward)->Arg(4)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
    const int64_t c = state.range(0);
    Xoshiro256 rng(2);
    Tensor in = random_tensor({c, 16, 16}, rng, true);
    Tensor w = random_tensor({c, c, 3, 3}, rng, true);
    Tensor b = random_tensor({c}, rng, true);
    for (auto _ : state) {
        Tensor loss = sum(conv2d(in, w, b));
        backward(loss);
    }
}
BENCHMARK(BM_Conv2dBackward)->Arg(4)->Arg(8)->Arg(16);

void BM_TrainingStep(benchmark::State& state) {
    UstepModel model(bench_config(), 3);
    const FrameSequence seq = bench_sequence(3);
    AdamState opt_state;
    model.params().zero_grad();
    for (auto _ : state) {
        Tensor loss = model.training_loss(seq);
        backward(loss);
        adamw_step(model.params(), opt_state, {.lr = 1e-3});
        model.params().zero_grad();
    }
}
BENCHMARK(BM_TrainingStep);

void BM_Rollout(benchmark::State& state) {
    UstepModel model(bench_config(), 4);
    const FrameSequence observed = bench_sequence(4).slice(0, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.predict(observed, 4));
    }
}
BENCHMARK(BM_Rollout);

void BM_Ssim(benchmark::State& state) {
    const int64_t side = state.range(0);
    Xoshiro256 rng(5);
    FrameGeometry g{1, side, side};
    std::vector<double> a(static_cast<size_t>(g.frame_elems()));
    std::vector<double> b(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.uniform();
        b[i] = rng.uniform();
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(metrics::ssim(a, b, g));
    }
}
BENCHMARK(BM_Ssim)->Arg(16)->Arg(64);

void BM_GenerateSequences(benchmark::State& state) {
    GenConfig cfg;
    cfg.num_sequences = state.range(0);
    cfg.seed = 6;
    for (auto _ : state) {
        benchmark::DoNotOptimize(generate(cfg));
    }
}
BENCHMARK(BM_GenerateSequences)->Arg(16)->Arg(64);

} // namespace

BENCHMARK_MAIN();
