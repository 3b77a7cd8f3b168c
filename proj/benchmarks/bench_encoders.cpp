#include <benchmark/benchmark.h>

#include "tj/baseline.h"
#include "tj/encoder.h"
#include "tj/ortho.h"

namespace {

std::vector<std::int64_t> random_tokens(std::int64_t n, std::int64_t vocab, std::uint64_t seed) {
    tj::Rng rng(seed);
    std::vector<std::int64_t> tokens(static_cast<std::size_t>(n));
    for (auto& t : tokens) {
        t = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(vocab)));
    }
    return tokens;
}

void BM_MatMul(benchmark::State& state) {
    const auto d = state.range(0);
    tj::Rng rng(1);
    auto a = tj::Tensor::randn({d, d}, rng);
    auto b = tj::Tensor::randn({d, d}, rng);
    tj::NoGradGuard no_grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(tj::matmul(a, b));
    }
}
BENCHMARK(BM_MatMul)->Arg(32)->Arg(64)->Arg(128);

void BM_Cayley(benchmark::State& state) {
    const auto d = state.range(0);
    tj::Rng rng(2);
    auto raw = tj::Tensor::randn({d, d}, rng, 0.2);
    tj::NoGradGuard no_grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(tj::orthogonalize(raw));
    }
}
BENCHMARK(BM_Cayley)->Arg(32)->Arg(64)->Arg(128);

void BM_OrthogonalAttentionForward(benchmark::State& state) {
    const auto n = state.range(0);
    tj::TransJectConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 64;
    cfg.experts = 2;
    cfg.vocab_size = 64;
    cfg.max_len = n;
    cfg.task = tj::Task::classification(10);
    tj::TransJectModel model(cfg, 3);
    const auto tokens = random_tokens(n, cfg.vocab_size, 4);
    tj::NoGradGuard no_grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.encode(tokens));
    }
}
BENCHMARK(BM_OrthogonalAttentionForward)->Arg(256)->Arg(512)->Arg(1024);

void BM_DotProductAttentionForward(benchmark::State& state) {
    const auto n = state.range(0);
    tj::BaselineConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 64;
    cfg.heads = 4;
    cfg.vocab_size = 64;
    cfg.max_len = n;
    cfg.task = tj::Task::classification(10);
    tj::BaselineModel model(cfg, 5);
    const auto tokens = random_tokens(n, cfg.vocab_size, 6);
    tj::NoGradGuard no_grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.encode(tokens));
    }
}
BENCHMARK(BM_DotProductAttentionForward)->Arg(256)->Arg(512)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
