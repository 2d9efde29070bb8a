#include "ulm/psf.hpp"

#include <algorithm>
#include <cmath>

namespace ulm {

namespace {

int band_of(double x, int n, int bands) {
  const int b = static_cast<int>(std::floor(x * bands / n));
  return std::clamp(b, 0, bands - 1);
}

}  // namespace

int Psf::region_of(double row, double col) const {
  return band_of(row, image_rows, regions_z) * regions_x + band_of(col, image_cols, regions_x);
}

RegionBounds Psf::bounds(int region) const {
  require(region >= 0 && region < region_count(), "Psf: region index out of range");
  const int bz = region / regions_x, bx = region % regions_x;
  // Inverse of band_of: first pixel whose band index reaches b.
  auto edge = [](int b, int n, int bands) { return static_cast<int>(std::ceil(static_cast<double>(b) * n / bands)); };
  return {edge(bz, image_rows, regions_z), edge(bz + 1, image_rows, regions_z), edge(bx, image_cols, regions_x),
          edge(bx + 1, image_cols, regions_x)};
}

void Psf::validate() const {
  require(image_rows > 0 && image_cols > 0, "Psf: empty image extent");
  require(regions_z > 0 && regions_x > 0, "Psf: region grid must be positive");
  require(static_cast<int>(templates.size()) == region_count(), "Psf: template count does not match region grid");
  for (const auto& t : templates) {
    require(t.rows() % 2 == 1 && t.cols() % 2 == 1, "Psf: templates must be odd-sized");
    const double peak = *std::max_element(t.begin(), t.end());
    require(std::abs(peak - 1.0) < 1e-9, "Psf: templates must have unit peak");
  }
}

ImageD gaussian_template(double sigma_rows, double sigma_cols) {
  require(sigma_rows > 0.0 && sigma_cols > 0.0, "gaussian_template: sigma must be positive");
  const int hr = static_cast<int>(std::ceil(3.0 * sigma_rows));
  const int hc = static_cast<int>(std::ceil(3.0 * sigma_cols));
  ImageD t(2 * hr + 1, 2 * hc + 1);
  for (int r = -hr; r <= hr; ++r)
    for (int c = -hc; c <= hc; ++c)
      t(r + hr, c + hc) = std::exp(-0.5 * (r * r / (sigma_rows * sigma_rows) + c * c / (sigma_cols * sigma_cols)));
  return t;
}

Psf Psf::gaussian(int image_rows, int image_cols,
                  const std::function<std::pair<double, double>(double, double)>& sigma_fn, int regions_z,
                  int regions_x) {
  Psf p;
  p.image_rows = image_rows;
  p.image_cols = image_cols;
  p.regions_z = regions_z;
  p.regions_x = regions_x;
  for (int k = 0; k < p.region_count(); ++k) {
    const auto b = p.bounds(k);
    const auto [sr, sc] = sigma_fn(0.5 * (b.row_begin + b.row_end - 1), 0.5 * (b.col_begin + b.col_end - 1));
    p.templates.push_back(gaussian_template(sr, sc));
    p.estimated.push_back(true);
  }
  p.validate();
  return p;
}

Psf Psf::gaussian(int image_rows, int image_cols, double sigma_px, int regions) {
  return gaussian(image_rows, image_cols, [=](double, double) { return std::pair{sigma_px, sigma_px}; }, regions,
                  regions);
}

}  // namespace ulm
