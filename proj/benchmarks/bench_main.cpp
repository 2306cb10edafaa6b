#include <benchmark/benchmark.h>

#include <vector>

#include "earvit/margin.hpp"
#include "earvit/verify.hpp"
#include "earvit/vit.hpp"

using namespace earvit;

namespace {

Tensor noise(Shape shape, Rng& rng, bool grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.normal();
    return Tensor(std::move(shape), std::move(v), grad);
}

ViTConfig toy_model(int stride) {
    ViTConfig c;
    c.depth = 2;
    c.width = 64;
    c.heads = 4;
    c.channels = 1;
    c.grid = PatchGrid::make(32, 8, stride);
    return c;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const Tensor a = noise({n, n}, rng), b = noise({n, n}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.counters["flops"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

// Token count is the cost driver: p8_s4 gives 49 patches, p8_s8 gives 16.
static void BM_ForwardBackward(benchmark::State& state) {
    const ViTConfig c = toy_model(static_cast<int>(state.range(0)));
    Rng rng(2);
    ModelParams params = ModelParams::initialize(c, rng);
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (int b = 0; b < 32; ++b) {
        images.push_back(noise({1, 32, 32}, rng));
        labels.push_back(b % 8);
    }
    Tensor protos = noise({8, static_cast<std::size_t>(kEmbeddingDim)}, rng, true);
    for (auto _ : state) {
        Tensor loss = cosface_loss(embed_images(c, params, images), labels, protos, MarginSpec{}, all_classes(8));
        loss.backward();
        benchmark::DoNotOptimize(loss.item());
    }
    state.SetLabel(c.label());
}
BENCHMARK(BM_ForwardBackward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_Embed(benchmark::State& state) {
    const ViTConfig c = toy_model(4);
    Rng rng(3);
    const ModelParams params = ModelParams::initialize(c, rng);
    std::vector<Tensor> images;
    for (int b = 0; b < 32; ++b) images.push_back(noise({1, 32, 32}, rng));
    for (auto _ : state) {
        NoGradGuard guard;
        benchmark::DoNotOptimize(embed_images(c, params, images));
    }
}
BENCHMARK(BM_Embed)->Unit(benchmark::kMillisecond);

static void BM_RocAuc(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(4);
    std::vector<double> g(n), imp(10 * n);
    for (double& x : g) x = rng.normal() + 1.0;
    for (double& x : imp) x = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(roc_auc(g, imp).auc);
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 11 * n));
}
BENCHMARK(BM_RocAuc)->Arg(1000)->Arg(100000);

static void BM_SampleClasses(benchmark::State& state) {
    std::vector<int> labels(32);
    for (int i = 0; i < 32; ++i) labels[i] = i * 31;
    Rng rng(5);
    for (auto _ : state) benchmark::DoNotOptimize(sample_classes(static_cast<int>(state.range(0)), labels, 0.3, rng));
}
BENCHMARK(BM_SampleClasses)->Arg(1000)->Arg(100000);
BENCHMARK_MAIN();
