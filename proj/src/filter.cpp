#include "ulm/filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ulm {

std::vector<double> gaussian_kernel(double sigma_px) {
  if (sigma_px <= 0.0) return {1.0};
  const int half = static_cast<int>(std::ceil(4.0 * sigma_px));
  std::vector<double> k(2 * half + 1);
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    k[i + half] = std::exp(-0.5 * i * i / (sigma_px * sigma_px));
    sum += k[i + half];
  }
  for (auto& v : k) v /= sum;
  return k;
}

ImageD gaussian_blur(const ImageD& img, double sigma_rows, double sigma_cols, Exec exec) {
  const auto kr = gaussian_kernel(sigma_rows);
  const auto kc = gaussian_kernel(sigma_cols);
  if (exec == Exec::Parallel) return kernels::parallel::separable_convolve(img, kr, kc);
  ImageD k2(static_cast<int>(kr.size()), static_cast<int>(kc.size()));
  for (int i = 0; i < k2.rows(); ++i)
    for (int j = 0; j < k2.cols(); ++j) k2(i, j) = kr[i] * kc[j];
  return kernels::serial::convolve2d(img, k2);
}

ImageD disk_kernel(double diameter_px) {
  const double radius = 0.5 * diameter_px;
  const int half = std::max(0, static_cast<int>(std::floor(radius)));
  ImageD k(2 * half + 1, 2 * half + 1);
  double sum = 0.0;
  for (int i = -half; i <= half; ++i)
    for (int j = -half; j <= half; ++j)
      if (i * i + j * j <= radius * radius + 1e-9) {
        k(i + half, j + half) = 1.0;
        sum += 1.0;
      }
  if (sum == 0.0) {
    k(half, half) = 1.0;
    sum = 1.0;
  }
  for (auto& v : k) v /= sum;
  return k;
}

ImageD disk_filter(const ImageD& img, double diameter_px, Exec exec) {
  const ImageD k = disk_kernel(diameter_px);
  return exec == Exec::Parallel ? kernels::parallel::convolve2d(img, k) : kernels::serial::convolve2d(img, k);
}

ImageD downsample2(const ImageD& img) {
  const ImageD blurred = gaussian_blur(img, 1.0);
  ImageD out((img.rows() + 1) / 2, (img.cols() + 1) / 2);
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) out(r, c) = blurred(2 * r, 2 * c);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + mid);
    m = 0.5 * (m + lo);
  }
  return m;
}

double mad(const std::vector<double>& v, double med) {
  std::vector<double> dev(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) dev[i] = std::abs(v[i] - med);
  return median(std::move(dev));
}

double ncc(const ImageD& a, const ImageD& b) {
  require(a.same_shape(b), "ncc: shape mismatch");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  const double den = std::sqrt(saa * sbb);
  return den > 0.0 ? sab / den : 1.0;
}

}  // namespace ulm
