#include "ulm/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

namespace ulm {

int configure_threads_from_env() {
  if (const char* env = std::getenv("ULM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
  return omp_get_max_threads();
}

namespace kernels {

namespace {

struct NccTemplate {
  std::vector<double> centred;  // t - mean(t)
  double sum_sq = 0.0;
  int half_r = 0, half_c = 0, rows = 0, cols = 0;
};

NccTemplate prepare_template(const ImageD& t) {
  require(t.rows() % 2 == 1 && t.cols() % 2 == 1, "NCC template must be odd-sized");
  NccTemplate out;
  out.rows = t.rows();
  out.cols = t.cols();
  out.half_r = t.rows() / 2;
  out.half_c = t.cols() / 2;
  double mean = 0.0;
  for (double v : t) mean += v;
  mean /= static_cast<double>(t.size());
  out.centred.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    out.centred[i] = t[i] - mean;
    out.sum_sq += out.centred[i] * out.centred[i];
  }
  return out;
}

inline double ncc_at(const ImageD& img, const NccTemplate& t, int r, int c) {
  const double n = static_cast<double>(t.rows * t.cols);
  double sa = 0.0, saa = 0.0, sat = 0.0;
  for (int i = 0; i < t.rows; ++i) {
    const int rr = r + i - t.half_r;
    if (rr < 0 || rr >= img.rows()) continue;
    const double* trow = &t.centred[std::size_t(i) * t.cols];
    for (int j = 0; j < t.cols; ++j) {
      const int cc = c + j - t.half_c;
      if (cc < 0 || cc >= img.cols()) continue;
      const double a = img(rr, cc);
      sa += a;
      saa += a * a;
      sat += a * trow[j];
    }
  }
  const double var_a = std::max(0.0, saa - sa * sa / n);
  const double den = std::sqrt(var_a * t.sum_sq);
  return den > 1e-300 ? sat / den : 0.0;
}

}  // namespace

namespace serial {

ImageD convolve2d(const ImageD& img, const ImageD& kernel) {
  require(kernel.rows() % 2 == 1 && kernel.cols() % 2 == 1, "convolve2d: kernel must be odd-sized");
  const int hr = kernel.rows() / 2, hc = kernel.cols() / 2;
  ImageD out(img.rows(), img.cols());
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < img.cols(); ++c) {
      double acc = 0.0;
      for (int i = -hr; i <= hr; ++i)
        for (int j = -hc; j <= hc; ++j)
          if (img.contains(r + i, c + j)) acc += kernel(i + hr, j + hc) * img(r + i, c + j);
      out(r, c) = acc;
    }
  return out;
}

ImageD ncc_map(const ImageD& img, const ImageD& templ) {
  require(templ.rows() % 2 == 1 && templ.cols() % 2 == 1, "NCC template must be odd-sized");
  const int hr = templ.rows() / 2, hc = templ.cols() / 2;
  const std::size_t n = templ.size();
  double tmean = 0.0;
  for (double v : templ) tmean += v;
  tmean /= static_cast<double>(n);
  ImageD out(img.rows(), img.cols());
  std::vector<double> window(n);
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < img.cols(); ++c) {
      double wmean = 0.0;
      for (int i = 0; i < templ.rows(); ++i)
        for (int j = 0; j < templ.cols(); ++j) {
          const int rr = r + i - hr, cc = c + j - hc;
          const double v = img.contains(rr, cc) ? img(rr, cc) : 0.0;
          window[std::size_t(i) * templ.cols() + j] = v;
          wmean += v;
        }
      wmean /= static_cast<double>(n);
      double num = 0.0, da = 0.0, dt = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double a = window[k] - wmean, t = templ[k] - tmean;
        num += a * t;
        da += a * a;
        dt += t * t;
      }
      const double den = std::sqrt(da * dt);
      out(r, c) = den > 1e-300 ? num / den : 0.0;
    }
  return out;
}

ImageD warp(const SplineImage<double>& src, const ImageD& shift_rows, const ImageD& shift_cols) {
  ImageD out(shift_rows.rows(), shift_rows.cols());
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) {
      const double sr = r + shift_rows(r, c), sc = c + shift_cols(r, c);
      out(r, c) = src.inside(sr, sc) ? src.value(sr, sc) : 0.0;
    }
  return out;
}

}  // namespace serial

namespace parallel {

ImageD separable_convolve(const ImageD& img, std::span<const double> k_rows, std::span<const double> k_cols) {
  require(k_rows.size() % 2 == 1 && k_cols.size() % 2 == 1, "separable_convolve: kernels must be odd-sized");
  const int rows = img.rows(), cols = img.cols();
  const int hc = static_cast<int>(k_cols.size() / 2), hr = static_cast<int>(k_rows.size() / 2);
  ImageD tmp(rows, cols), out(rows, cols);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const double* in = &img(r, 0);
    double* o = &tmp(r, 0);
    for (int c = 0; c < cols; ++c) {
      const int j0 = std::max(-hc, -c), j1 = std::min(hc, cols - 1 - c);
      double acc = 0.0;
      for (int j = j0; j <= j1; ++j) acc += k_cols[j + hc] * in[c + j];
      o[c] = acc;
    }
  }
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int i0 = std::max(-hr, -r), i1 = std::min(hr, rows - 1 - r);
    double* o = &out(r, 0);
    for (int i = i0; i <= i1; ++i) {
      const double w = k_rows[i + hr];
      const double* in = &tmp(r + i, 0);
      for (int c = 0; c < cols; ++c) o[c] += w * in[c];
    }
  }
  return out;
}

ImageD convolve2d(const ImageD& img, const ImageD& kernel) {
  require(kernel.rows() % 2 == 1 && kernel.cols() % 2 == 1, "convolve2d: kernel must be odd-sized");
  const int hr = kernel.rows() / 2, hc = kernel.cols() / 2;
  const int rows = img.rows(), cols = img.cols();
  ImageD out(rows, cols);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    double* o = &out(r, 0);
    for (int i = -hr; i <= hr; ++i) {
      const int rr = r + i;
      if (rr < 0 || rr >= rows) continue;
      const double* in = &img(rr, 0);
      for (int j = -hc; j <= hc; ++j) {
        const double w = kernel(i + hr, j + hc);
        if (w == 0.0) continue;
        const int c0 = std::max(0, -j), c1 = std::min(cols, cols - j);
        for (int c = c0; c < c1; ++c) o[c] += w * in[c + j];
      }
    }
  }
  return out;
}

ImageD ncc_map(const ImageD& img, const ImageD& templ) {
  const NccTemplate t = prepare_template(templ);
  ImageD out(img.rows(), img.cols());
#pragma omp parallel for schedule(dynamic, 4)
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < img.cols(); ++c) out(r, c) = ncc_at(img, t, r, c);
  return out;
}

ImageD warp(const SplineImage<double>& src, const ImageD& shift_rows, const ImageD& shift_cols) {
  ImageD out(shift_rows.rows(), shift_rows.cols());
#pragma omp parallel for schedule(static)
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) {
      const double sr = r + shift_rows(r, c), sc = c + shift_cols(r, c);
      out(r, c) = src.inside(sr, sc) ? src.value(sr, sc) : 0.0;
    }
  return out;
}

}  // namespace parallel

}  // namespace kernels
}  // namespace ulm
