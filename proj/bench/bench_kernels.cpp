// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fcfl/kernels.hpp"

namespace kernels = fcfl::kernels;

namespace {

std::vector<float> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const kernels::GemmShape s{n, n, n, false, false};
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::gemm<float>(s, a, b, c, false);
    else
      kernels::serial::gemm<float>(s, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

// Patch-embedding shaped convolution (kernel == stride) and a 3x3 NRCA layer.
kernels::Conv2dGeometry conv_case(int which) {
  if (which == 0) return {8, 3, 192, 240, 240, 12, 12, 12, 0};
  return {8, 16, 32, 64, 64, 3, 3, 1, 1};
}

template <bool Parallel>
void BM_Conv2dForward(benchmark::State& state) {
  const auto g = conv_case(static_cast<int>(state.range(0)));
  const auto x = random_vector(g.input_size(), 3), w = random_vector(g.kernel_size(), 4);
  std::vector<float> y(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::conv2d_forward<float>(g, x, w, y);
    else
      kernels::serial::conv2d_forward<float>(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Conv2dBackward(benchmark::State& state) {
  const auto g = conv_case(static_cast<int>(state.range(0)));
  const auto x = random_vector(g.input_size(), 5), w = random_vector(g.kernel_size(), 6);
  const auto dy = random_vector(g.output_size(), 7);
  std::vector<float> dx(g.input_size()), dw(g.kernel_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::conv2d_backward_input<float>(g, dy, w, dx);
      kernels::parallel::conv2d_backward_weight<float>(g, x, dy, dw);
    } else {
      kernels::serial::conv2d_backward_input<float>(g, dy, w, dx);
      kernels::serial::conv2d_backward_weight<float>(g, x, dy, dw);
    }
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(128)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(128)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Conv2dForward<false>)->Name("conv2d_forward/serial")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dForward<true>)->Name("conv2d_forward/parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Conv2dBackward<false>)->Name("conv2d_backward/serial")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dBackward<true>)->Name("conv2d_backward/parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
