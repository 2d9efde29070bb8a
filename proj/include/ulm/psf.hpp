#pragma once

#include <functional>
#include <vector>

#include "ulm/core.hpp"

namespace ulm {

struct RegionBounds {
  int row_begin = 0, row_end = 0;  // half-open pixel ranges
  int col_begin = 0, col_end = 0;
};

/// Regional point-spread functions over a regions_z x regions_x partition of
/// an image (depth-major region order). Templates are envelope intensity,
/// odd-sized, unit peak.
struct Psf {
  int image_rows = 0;
  int image_cols = 0;
  int regions_z = 5;
  int regions_x = 5;
  std::vector<ImageD> templates;
  std::vector<bool> estimated;  // false where a neighbouring region's template was borrowed

  int region_count() const { return regions_z * regions_x; }
  int region_of(double row, double col) const;
  RegionBounds bounds(int region) const;
  const ImageD& at(int region) const { return templates.at(region); }
  void validate() const;

  /// Sampled Gaussian templates; sigma_fn(row, col) returns (sigma_rows, sigma_cols)
  /// in pixels, evaluated at each region centre.
  static Psf gaussian(int image_rows, int image_cols,
                      const std::function<std::pair<double, double>(double, double)>& sigma_fn, int regions_z = 5,
                      int regions_x = 5);
  static Psf gaussian(int image_rows, int image_cols, double sigma_px, int regions = 5);
};

/// Odd-sized unit-peak Gaussian template, half-size ceil(3 sigma).
ImageD gaussian_template(double sigma_rows, double sigma_cols);

}  // namespace ulm
