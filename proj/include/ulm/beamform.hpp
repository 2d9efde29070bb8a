#pragma once

// Channel data -> CEUS frames: amplitude-modulation combination, diverging-wave
// delay-and-sum on a polar grid, coherence-variance weighting, inter-angle
// axial motion compensation and scan conversion.

#include <string>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/kernels.hpp"
#include "ulm/phantom.hpp"

namespace ulm {

/// Beams fan out from the unsteered virtual source; r is measured from it.
struct PolarGrid {
  int samples = 0;  // radial
  int beams = 0;
  double r0_mm = 0.0;
  double dr_mm = 0.0;
  double phi0_rad = 0.0;
  double dphi_rad = 0.0;
  double source_mm = 21.6;

  double r(double ir) const { return r0_mm + ir * dr_mm; }
  double phi(double ib) const { return phi0_rad + ib * dphi_rad; }
  Vec2 position(double ir, double ib) const;
  Vec2 radial_unit(double ib) const;
  /// Fractional (ir, ib) of a Cartesian point; false when outside the footprint.
  bool index_of(Vec2 p, double& ir, double& ib) const;
  void validate() const;

  /// Radial step c/(2 fs), beams spread evenly over the probe sector.
  static PolarGrid for_probe(const ProbeGeometry& probe, double depth_min_mm, double depth_max_mm, int beams = 256);
};

/// full - half_odd - half_even.
ImageD am_combine(const ChannelTriplet& t);

/// Row-wise analytic signal (one-sided spectrum).
ImageC analytic_signal(const ImageD& rf);

/// Delay-and-sum output for one steering angle: coherent sum and the
/// per-pixel incoherent power sum over elements.
struct AngleImage {
  ImageC sum;
  ImageD power;
  ImageD count;
};

enum class Apodization { None, Hann };
Apodization apodization_from(const std::string& s);

/// Receive weight of element e.
double apodization_weight(Apodization a, int element, int count);

/// radial_shift_mm (optional, same shape as the grid) moves each pixel's focus
/// along its beam before computing delays.
AngleImage das(const ImageC& analytic, const ProbeGeometry& probe, double angle_deg, const PolarGrid& grid,
               const ImageD* radial_shift_mm = nullptr, Exec exec = Exec::Parallel,
               Apodization apod = Apodization::None);

/// Coherence-variance weighting; eps_var < 0 selects 1e-3 x mean per-pixel power.
ImageC cv_weight(const AngleImage& a, double eps_var = -1.0);

/// Per-pixel axial displacement (mm) between consecutive angle acquisitions
/// from lag-one phase of the time-ordered angle images (ascending pairs 0-1,
/// 1-2 and descending pairs 3-4, 4-5), smoothed with a Gaussian of sigma_px.
ImageD inter_angle_shift(const std::vector<ImageC>& angle_images, double wavelength_mm, double sigma_px);

/// Angle k resampled radially at r + (k - (K-1)/2) * shift (Lanczos-4).
AngleImage shift_radially(const AngleImage& a, const ImageD& shift_mm, double step, double dr_mm);

enum class Weighting { Das, CoherenceVariance };

/// Sums the angle images (optionally shifted toward the central acquisition
/// time) and applies the weighting over all channel x angle summands.
ImageC compound(const std::vector<AngleImage>& angles, const ImageD* shift_mm, double dr_mm, Weighting w,
               double cv_eps = -1.0);

enum class CompoundRoute { Stack, Streaming };

struct BeamformOptions {
  Weighting weighting = Weighting::CoherenceVariance;
  bool motion_correction = true;
  CompoundRoute route = CompoundRoute::Stack;
  double doppler_sigma_px = 2.0;
  bool am = true;  // false beamforms the full-amplitude pulse alone
  Apodization apodization = Apodization::None;
  double cv_eps = -1.0;  // negative: automatic
  Exec exec = Exec::Parallel;
};

/// One compounded complex frame from per-angle channel data (acquisition order).
ImageC beamform_frame(const std::vector<ImageD>& rf_per_angle, const std::vector<double>& angles_deg,
                      const ProbeGeometry& probe, const PolarGrid& grid, const BeamformOptions& opt);
ImageC beamform_frame(const std::vector<const ChannelTriplet*>& triplets, const ProbeGeometry& probe,
                      const PolarGrid& grid, const BeamformOptions& opt);

/// Per-frame subtraction of a 3-frame moving mean (2-frame means at the ends).
template <typename T>
std::vector<Image<T>> moving_average_subtract(const std::vector<Image<T>>& frames) {
  const int n = static_cast<int>(frames.size());
  require(n >= 2, "moving_average_subtract: need at least two frames");
  std::vector<Image<T>> out(n);
  for (int k = 0; k < n; ++k) {
    const int lo = k > 0 ? k - 1 : 0, hi = k + 1 < n ? k + 1 : n - 1;
    const double w = 1.0 / (hi - lo + 1);
    Image<T> o = frames[k];
    for (int j = lo; j <= hi; ++j) {
      require(frames[j].same_shape(o), "moving_average_subtract: shape mismatch");
      for (std::size_t i = 0; i < o.size(); ++i) o[i] -= w * frames[j][i];
    }
    out[k] = std::move(o);
  }
  return out;
}

/// Envelope scan conversion by cubic B-spline. Raster pixels outside the polar
/// footprint are an error unless allow_outside (then zero).
ImageD to_cartesian(const ImageD& polar_envelope, const PolarGrid& polar, const Grid& grid, bool allow_outside = false);

struct BeamformSequenceOptions {
  BeamformOptions frame;
  bool clutter_filter = false;  // moving-average subtraction of channel data across frames
  bool allow_outside = false;
};

ImageSequence beamform_sequence(const std::vector<ChannelTriplet>& data, const ProbeGeometry& probe,
                                const PolarGrid& polar, const Grid& grid, double frame_rate,
                                const BeamformSequenceOptions& opt);

}  // namespace ulm
