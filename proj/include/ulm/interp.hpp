#pragma once

#include <span>

#include "ulm/core.hpp"

namespace ulm {

/// Interpolating cubic B-spline over a 2D image (mirror boundary).
/// Coordinates are fractional (row, col) pixel indices.
template <typename T>
class SplineImage {
 public:
  SplineImage() = default;
  explicit SplineImage(const Image<T>& samples);

  int rows() const { return coef_.rows(); }
  int cols() const { return coef_.cols(); }
  bool inside(double r, double c) const { return r >= 0.0 && c >= 0.0 && r <= rows() - 1 && c <= cols() - 1; }

  T value(double r, double c) const;
  /// Value plus partial derivatives along rows (d/dr) and columns (d/dc).
  T value(double r, double c, T& d_dr, T& d_dc) const;

  const Image<T>& coefficients() const { return coef_; }

 private:
  Image<T> coef_;
};

extern template class SplineImage<double>;
extern template class SplineImage<cdouble>;

/// In-place cubic B-spline prefilter of a 1D signal (mirror boundary).
template <typename T>
void bspline_prefilter(std::span<T> s);

/// Cubic B-spline basis weights for fractional offset t in [0,1) at taps -1..2.
void bspline_weights(double t, double w[4]);
void bspline_weight_derivs(double t, double dw[4]);

/// Uniform cubic B-spline kernel value at x (support |x| < 2).
double bspline3(double x);
double bspline3_deriv(double x);

/// Bilinear sample with zero outside the image.
double bilinear(const ImageD& img, double r, double c);

/// Lanczos (a = 4) 1D interpolation of a complex signal; zero outside.
cdouble lanczos4(std::span<const cdouble> s, double x);

}  // namespace ulm
