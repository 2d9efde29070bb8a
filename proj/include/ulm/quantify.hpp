#pragma once

// Vessel centerlines, diameter and speed distributions, and cross-section
// profiles on super-resolved maps.

#include <iosfwd>
#include <string>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/localize.hpp"

namespace ulm {

/// Otsu threshold over the positive finite values (256 bins).
double otsu_threshold(const ImageD& img);
Mask binarize(const ImageD& img, double threshold);

/// Zhang-Suen thinning to a one-pixel-wide 8-connected skeleton.
Mask skeletonize(const Mask& binary);

/// Exact Euclidean distance (pixels) from each foreground pixel centre to the
/// nearest background pixel centre; zero on background. Pixels outside the
/// raster count as background.
ImageD distance_transform(const Mask& binary);

struct Histogram {
  std::vector<double> low, high, mass;
  double total() const;
};

/// Diameter per centerline pixel = 2 (EDT - 0.5) pitch; 50 um bins; values
/// at or above the cap land in the cap bin.
Histogram diameter_distribution(const Mask& centerline, const Mask& binary, double pitch_um, double bin_um = 50.0,
                                double cap_um = 1500.0);

struct LogNormalFit {
  double mu = 0.0, sigma = 0.0;
  double mean = 0.0, std = 0.0;  // moments of the fitted distribution
  std::size_t samples = 0;
  bool degenerate = false;  // sigma below 1e-9
};

LogNormalFit fit_lognormal(const std::vector<double>& values);

struct SpeedDistribution {
  Histogram histogram;
  LogNormalFit fit;
};

/// 5 mm/s bins over the positive finite pixels, normalized by their count.
SpeedDistribution speed_distribution(const ImageD& speed, double bin_mms = 5.0);

/// "54.3 ± 23.9 mm/s"
std::string format_mean_std(double mean, double std, const std::string& unit = "mm/s");

struct Peak {
  double position_um = 0.0;  // along the segment from its start
  double value = 0.0;        // normalized
  double fwhm_um = 0.0;      // NaN when the half-maximum is not reached on a side
};

struct Profile {
  std::vector<double> s_um;
  std::vector<double> value;  // normalized by the maximum
  std::vector<Peak> peaks;
  std::vector<double> separations_um;
  std::vector<double> troughs;  // minimum between consecutive peaks
};

/// Bilinear samples along p0 -> p1 (mm) every step_um (default: half the
/// raster pitch). Peaks are local maxima with prominence >= min_prominence.
Profile cross_section(const ImageD& img, const Grid& grid, Vec2 p0, Vec2 p1, double step_um = 0.0,
                      double min_prominence = 0.05);

void write_histogram_csv(std::ostream& os, const Histogram& h);

}  // namespace ulm
