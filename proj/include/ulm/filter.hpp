#pragma once

#include <vector>

#include "ulm/core.hpp"
#include "ulm/kernels.hpp"

namespace ulm {

inline double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }
inline double sigma_to_fwhm(double sigma) { return sigma * 2.0 * std::sqrt(2.0 * std::log(2.0)); }

/// Normalised Gaussian taps truncated at +-ceil(4 sigma).
std::vector<double> gaussian_kernel(double sigma_px);

/// Zero-padded Gaussian blur with independent sigmas along rows and columns.
ImageD gaussian_blur(const ImageD& img, double sigma_rows, double sigma_cols, Exec exec = Exec::Parallel);
inline ImageD gaussian_blur(const ImageD& img, double sigma, Exec exec = Exec::Parallel) {
  return gaussian_blur(img, sigma, sigma, exec);
}

/// Normalised flat disk of the given diameter (pixels within diameter/2 of centre).
ImageD disk_kernel(double diameter_px);
ImageD disk_filter(const ImageD& img, double diameter_px, Exec exec = Exec::Parallel);

/// 2x decimation after a sigma=1 Gaussian anti-alias blur.
ImageD downsample2(const ImageD& img);

double median(std::vector<double> v);
/// Median absolute deviation (unscaled).
double mad(const std::vector<double>& v, double med);

/// Pearson correlation of two equally shaped images.
double ncc(const ImageD& a, const ImageD& b);

}  // namespace ulm
