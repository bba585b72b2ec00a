#include <benchmark/benchmark.h>

#include "stateformer/autodiff.hpp"
#include "stateformer/rng.hpp"

using namespace stf;

static Tensor random_mat(int64_t r, int64_t c, uint64_t seed) {
    Rng rng(seed);
    Tensor t({r, c}, 0.0);
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = rng.next_normal();
    return t;
}

static void BM_Matmul(benchmark::State& state) {
    const int64_t n = state.range(0);
    Tensor a = random_mat(n, n, 1);
    Tensor b = random_mat(n, n, 2);
    for (auto _ : state) {
        Tensor c = matmul(a, b);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_SoftmaxRows(benchmark::State& state) {
    const int64_t n = state.range(0);
    Tensor x = random_mat(n, n, 3);
    for (auto _ : state) {
        Tensor y = softmax_rows(x);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_SoftmaxRows)->Arg(128)->Arg(512);

BENCHMARK_MAIN();
