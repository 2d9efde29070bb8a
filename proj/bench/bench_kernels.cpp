#include <benchmark/benchmark.h>

#include <random>

#include "ulm/filter.hpp"
#include "ulm/kernels.hpp"
#include "ulm/psf.hpp"

namespace {

ulm::ImageD noise(int rows, int cols, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ulm::ImageD img(rows, cols);
  for (auto& v : img) v = u(gen);
  return img;
}

void BM_ncc_serial(benchmark::State& st) {
  const auto img = noise(st.range(0), st.range(0), 1);
  const auto t = ulm::gaussian_template(1.2, 2.0);
  for (auto _ : st) benchmark::DoNotOptimize(ulm::kernels::serial::ncc_map(img, t));
}

void BM_ncc_parallel(benchmark::State& st) {
  const auto img = noise(st.range(0), st.range(0), 1);
  const auto t = ulm::gaussian_template(1.2, 2.0);
  for (auto _ : st) benchmark::DoNotOptimize(ulm::kernels::parallel::ncc_map(img, t));
}

void BM_conv_serial(benchmark::State& st) {
  const auto img = noise(st.range(0), st.range(0), 2);
  const auto k = noise(9, 9, 3);
  for (auto _ : st) benchmark::DoNotOptimize(ulm::kernels::serial::convolve2d(img, k));
}

void BM_conv_parallel(benchmark::State& st) {
  const auto img = noise(st.range(0), st.range(0), 2);
  const auto k = noise(9, 9, 3);
  for (auto _ : st) benchmark::DoNotOptimize(ulm::kernels::parallel::convolve2d(img, k));
}

void BM_blur(benchmark::State& st) {
  const auto img = noise(st.range(0), st.range(0), 4);
  const auto exec = st.range(1) ? ulm::Exec::Parallel : ulm::Exec::Serial;
  for (auto _ : st) benchmark::DoNotOptimize(ulm::gaussian_blur(img, 3.0, exec));
}

}  // namespace

BENCHMARK(BM_ncc_serial)->Arg(128)->Arg(256);
BENCHMARK(BM_ncc_parallel)->Arg(128)->Arg(256);
BENCHMARK(BM_conv_serial)->Arg(128)->Arg(256);
BENCHMARK(BM_conv_parallel)->Arg(128)->Arg(256);
BENCHMARK(BM_blur)->Args({512, 0})->Args({512, 1});

BENCHMARK_MAIN();
