// OpenMP kernels vs their serial references.
//
//   DYFN_THREADS=4 ./bench_kernels --benchmark_filter=Conv

#include <benchmark/benchmark.h>

#include "dyfn/kernels.hpp"
#include "dyfn/rng.hpp"

namespace {

dyfn::Tensor random(dyfn::Shape shape, std::uint64_t seed) {
  dyfn::Rng rng(seed);
  dyfn::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

template <bool Parallel>
void BM_Conv(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto in = random({16, n, n}, 1);
  const auto w = random({8, 16, 3, 3}, 2);
  for (auto _ : state) {
    auto out = Parallel ? dyfn::kernels::conv2d(in, w) : dyfn::kernels::serial::conv2d(in, w);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(8 * 16 * 9 * n * n));
}

template <bool Parallel>
void BM_ConvGradKernel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto in = random({16, n, n}, 3);
  const auto g = random({8, n, n}, 4);
  for (auto _ : state) {
    auto out = Parallel ? dyfn::kernels::conv2d_grad_kernel(g, in, 3)
                        : dyfn::kernels::serial::conv2d_grad_kernel(g, in, 3);
    benchmark::DoNotOptimize(out.data().data());
  }
}

template <bool Parallel>
void BM_ChannelStats(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto f = random({32, n, n}, 5);
  dyfn::Tensor m, s;
  for (auto _ : state) {
    if (Parallel)
      dyfn::kernels::channel_stats(f, m, s);
    else
      dyfn::kernels::serial::channel_stats(f, m, s);
    benchmark::DoNotOptimize(s.data().data());
  }
}

}  // namespace

BENCHMARK(BM_Conv<false>)->Name("Conv/serial")->Arg(16)->Arg(64)->Arg(128);
BENCHMARK(BM_Conv<true>)->Name("Conv/omp")->Arg(16)->Arg(64)->Arg(128);
BENCHMARK(BM_ConvGradKernel<false>)->Name("ConvGradKernel/serial")->Arg(16)->Arg(64);
BENCHMARK(BM_ConvGradKernel<true>)->Name("ConvGradKernel/omp")->Arg(16)->Arg(64);
BENCHMARK(BM_ChannelStats<false>)->Name("ChannelStats/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_ChannelStats<true>)->Name("ChannelStats/omp")->Arg(64)->Arg(256);

int main(int argc, char** argv) {
  dyfn::kernels::configure_threads();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
