#pragma once

// Velocity seeding of newly appeared bubbles from three consecutive frames,
// and the pre-fit residual covariance estimate built on the same search.

#include <vector>

#include <Eigen/Dense>

#include "ulm/core.hpp"

namespace ulm {

struct Detection {
  double x_mm = 0.0;
  double z_mm = 0.0;
  double intensity = 0.0;
  int source = -1;  // index into the caller's localization list
};

struct FuzzyOptions {
  double v_max_mms = 150.0;
  double frame_rate = 305.0;
  int windows = 10;
  double window_lo = 0.3;  // fractions of v_max / f
  double window_hi = 1.2;
  int path_samples = 7;
  int histogram_bins = 32;
  int min_windows = 3;  // paired in fewer windows -> static

  double window_mm(int r) const;
  void validate() const;
};

/// Nearest-pixel intensity lookup on a maximum intensity projection.
struct MipView {
  const ImageD* image = nullptr;
  const Grid* grid = nullptr;
  double at(double x_mm, double z_mm) const;
  explicit operator bool() const { return image && grid && !image->empty(); }
};

/// Coefficient of variation of MIP samples on the straight path a -> b.
double path_variation(const MipView& mip, double ax, double az, double bx, double bz, int samples = 7);

/// Minimum-cost choice for one bubble in one search window.
struct WindowPick {
  bool paired = false;
  int n = -1, q = -1;                      // indices in frames n+1, n+2
  Eigen::Vector2d velocity{0.0, 0.0};      // mm/s between the first two frames
  Eigen::Vector2d residual{0.0, 0.0};      // p_q + p_m - 2 p_n (mm)
  double innovation = 0.0;                 // |residual|
};

/// Steps 1-3: per new bubble, the pick in each window (outer index bubble).
std::vector<std::vector<WindowPick>> fuzzy_picks(const std::vector<Detection>& first,
                                                 const std::vector<Detection>& second,
                                                 const std::vector<Detection>& third, const MipView& mip,
                                                 const FuzzyOptions& opt);

/// Normalised histogram of innovation distances.
struct InnovationHistogram {
  double lo = 0.0, hi = 0.0;
  std::vector<double> mass;
  static InnovationHistogram build(const std::vector<double>& d, int bins);
  double weight(double d) const;
  bool empty() const { return mass.empty(); }
};

struct FuzzyInit {
  Eigen::Vector2d velocity{0.0, 0.0};
  bool initialised = false;  // false -> static
  int paired_windows = 0;
};

/// Weighted window average per bubble. An empty histogram is built from the
/// picks themselves.
std::vector<FuzzyInit> fuzzy_combine(const std::vector<std::vector<WindowPick>>& picks,
                                     const InnovationHistogram& hist, const FuzzyOptions& opt);

std::vector<FuzzyInit> fuzzy_init(const std::vector<Detection>& first, const std::vector<Detection>& second,
                                  const std::vector<Detection>& third, const MipView& mip, const FuzzyOptions& opt,
                                  const InnovationHistogram& hist = {});

struct ShatEstimate {
  double sigma_e2 = 0.0;  // mm^2
  Eigen::Matrix2d S_hat = Eigen::Matrix2d::Zero();
  int residuals = 0;
  std::vector<int> group_starts;  // positions in the frame list
  InnovationHistogram histogram;
};

/// Residuals of the window picks over n_groups disjoint consecutive triples.
/// frame_numbers gives the acquisition index of each entry of frames; triples
/// must be consecutive in it.
ShatEstimate estimate_shat(const std::vector<std::vector<Detection>>& frames, const std::vector<int>& frame_numbers,
                           const MipView& mip, const FuzzyOptions& opt, int n_groups = 10);

}  // namespace ulm
