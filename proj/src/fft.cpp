#include "ulm/fft.hpp"

#include <fftw3.h>

#include <mutex>

namespace ulm::fft {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<cdouble> transform(std::span<const cdouble> x, int sign) {
  const int n = static_cast<int>(x.size());
  std::vector<cdouble> in(x.begin(), x.end()), out(x.size());
  if (n == 0) return out;
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(in.data()), reinterpret_cast<fftw_complex*>(out.data()),
                            sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

}  // namespace

std::vector<cdouble> forward(std::span<const cdouble> x) { return transform(x, FFTW_FORWARD); }

std::vector<cdouble> inverse(std::span<const cdouble> x) {
  auto out = transform(x, FFTW_BACKWARD);
  const double s = out.empty() ? 1.0 : 1.0 / static_cast<double>(out.size());
  for (auto& v : out) v *= s;
  return out;
}

ImageC forward2d(const ImageD& img) {
  ImageC in(img.rows(), img.cols()), out(img.rows(), img.cols());
  for (std::size_t i = 0; i < img.size(); ++i) in[i] = img[i];
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(img.rows(), img.cols(), reinterpret_cast<fftw_complex*>(in.data()),
                            reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

}  // namespace ulm::fft
