// Serial reference vs OpenMP kernels. Run with OMP_NUM_THREADS set to the
// thread count of interest; both backends produce bit-identical results.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "cgclip/numerics/kernels.hpp"

namespace k = cgclip::kernels;

namespace {

std::vector<float> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<float> d(0.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

template <k::Backend B>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<float> c(n * n);
  k::ScopedBackend scope(B);
  for (auto _ : state) {
    k::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_GemmReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    k::gemm_reference(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}

// Self-attention over `tokens` rows of width 32 with 4 heads, 4 groups.
template <k::Backend B>
void BM_Attention(benchmark::State& state) {
  const k::AttentionDims dims{4, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(0)),
                              32, 4};
  const std::size_t rows = dims.groups * dims.queries * dims.width;
  const auto q = random_vector(rows, 3), kk = random_vector(rows, 4), v = random_vector(rows, 5);
  std::vector<float> out(rows), probs(dims.groups * dims.heads * dims.queries * dims.keys);
  k::ScopedBackend scope(B);
  for (auto _ : state) {
    k::attention_forward(dims, 0.35355339f, q.data(), kk.data(), v.data(), out.data(), probs.data());
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_GemmReference)->RangeMultiplier(2)->Range(32, 256);
BENCHMARK_TEMPLATE(BM_Gemm, k::Backend::kSerial)->RangeMultiplier(2)->Range(32, 256);
BENCHMARK_TEMPLATE(BM_Gemm, k::Backend::kOpenMP)->RangeMultiplier(2)->Range(32, 256);
BENCHMARK_TEMPLATE(BM_Attention, k::Backend::kSerial)->RangeMultiplier(4)->Range(16, 1024);
BENCHMARK_TEMPLATE(BM_Attention, k::Backend::kOpenMP)->RangeMultiplier(4)->Range(16, 1024);

BENCHMARK_MAIN();
