// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <vector>

#include "prockd/kernels.hpp"
#include "prockd/params.hpp"

using namespace prockd;
using kernels::Trans;

namespace {

std::vector<double> random_values(std::size_t n) {
  Rng rng(n);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n), b = random_values(n * n);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::gemm(Trans::No, Trans::No, n, n, n, a, b, c);
    else
      kernels::serial::gemm(Trans::No, Trans::No, n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}

// Attention-shaped: batch x heads slabs of [l x hd] * [l x hd]^T.
template <bool Parallel>
void BM_BatchedGemm(benchmark::State& state) {
  const std::size_t batch = static_cast<std::size_t>(state.range(0)), l = 16, hd = 16;
  const auto a = random_values(batch * l * hd), b = random_values(batch * l * hd);
  std::vector<double> c(batch * l * l);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::batched_gemm(batch, Trans::No, Trans::Yes, l, l, hd, a, b, c);
    else
      kernels::serial::batched_gemm(batch, Trans::No, Trans::Yes, l, l, hd, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * batch * l * l * hd, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0)), cols = 16;
  const auto x = random_values(rows * cols);
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::softmax_rows(rows, cols, x, y);
    else
      kernels::serial::softmax_rows(rows, cols, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_BatchedGemm<false>)->Name("batched_gemm/serial")->Arg(128)->Arg(1024);
BENCHMARK(BM_BatchedGemm<true>)->Name("batched_gemm/parallel")->Arg(128)->Arg(1024);
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(4096)->Arg(65536);
BENCHMARK(BM_Softmax<true>)->Name("softmax/parallel")->Arg(4096)->Arg(65536);

BENCHMARK_MAIN();
