// Step-time and measure-time benchmarks. The optimizer family shares one
// batch and network so the per-iteration costs are directly comparable
// (plain momentum vs the two-pass ascent step vs M-split smoothing).

#include <benchmark/benchmark.h>

#include "flatmin/dataset.hpp"
#include "flatmin/landscape.hpp"
#include "flatmin/model.hpp"
#include "flatmin/objective.hpp"
#include "flatmin/optim.hpp"
#include "flatmin/sharpness.hpp"

using namespace flatmin;

namespace {

struct TrainFixture {
    Dataset data;
    Model model;
    ParamVector params;
    Batch batch;

    TrainFixture()
        : data(make_synthetic(SyntheticKind::blobs, 256, 16, 4, 7)) {
        auto built = build_mlp({16, 64, 64, 4}, 7);
        model = built.first;
        params = built.second;
        batch = full_batch(data);
    }
};

TrainFixture& fixture() {
    static TrainFixture f;
    return f;
}

void bench_msgd_step(benchmark::State& state) {
    auto& f = fixture();
    OptimizerState opt{f.params, std::nullopt, 0, 0.01, 0.9, 5e-4};
    for (auto _ : state) {
        msgd_step(opt, f.model, f.batch);
        benchmark::DoNotOptimize(opt.params.values.data());
    }
}

void bench_sam_step(benchmark::State& state) {
    auto& f = fixture();
    OptimizerState opt{f.params, std::nullopt, 0, 0.01, 0.9, 5e-4};
    for (auto _ : state) {
        sam_step(opt, f.model, f.batch, 0.05);
        benchmark::DoNotOptimize(opt.params.values.data());
    }
}

void bench_lpf_step(benchmark::State& state) {
    auto& f = fixture();
    OptimizerState opt{f.params, std::nullopt, 0, 0.01, 0.9, 5e-4};
    LpfConfig cfg;
    cfg.gamma0 = 0.0005;
    cfg.alpha = 15.0;
    cfg.M = static_cast<int>(state.range(0));
    cfg.T_total = 1u << 20;
    for (auto _ : state) {
        lpf_sgd_step(opt, f.model, f.batch, cfg, 11);
        benchmark::DoNotOptimize(opt.params.values.data());
    }
}

void bench_hvp(benchmark::State& state) {
    auto& f = fixture();
    ParamVector v = zeros_like(f.params);
    for (std::size_t i = 0; i < v.size(); ++i) v.values[i] = (i % 7) * 0.1 - 0.3;
    for (auto _ : state) {
        ParamVector h = hvp(f.model, f.params, f.batch, v);
        benchmark::DoNotOptimize(h.values.data());
    }
}

void bench_lpf_measure(benchmark::State& state) {
    static auto land = sample_mean_scaled(100, 10.0, 3);
    static QuadraticObjective obj(land);
    const std::vector<double> origin(100, 0.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(lpf_measure(obj, origin, 0.1, static_cast<int>(state.range(0)), 5));
    }
}

void bench_lanczos(benchmark::State& state) {
    static auto land = sample_mean_scaled(100, 10.0, 3);
    static QuadraticObjective obj(land);
    const std::vector<double> origin(100, 0.0);
    for (auto _ : state) {
        const auto est = lanczos_spectrum(obj, origin, static_cast<int>(state.range(0)), 5);
        benchmark::DoNotOptimize(est.ritz_values.data());
    }
}

}  // namespace

BENCHMARK(bench_msgd_step)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_sam_step)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_lpf_step)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_hvp)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_lpf_measure)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_lanczos)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
