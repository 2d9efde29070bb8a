#pragma once

// Super-resolved density, speed and direction maps from tracks, and the
// bubble-flow animation.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/kernels.hpp"
#include "ulm/tracker.hpp"

namespace ulm {

struct RenderOptions {
  Grid grid;                    // super-resolution raster
  double wavelength_um = 641.7;
  int min_track_len = 4;
  Exec exec = Exec::Parallel;

  double fwhm_um() const { return 0.25 * wavelength_um; }
  double fwhm_px() const { return fwhm_um() * 1e-3 / grid.dx_mm; }
  void validate() const;
};

/// Raster pitch of 13.5 um (or finer) from (x0, z0) mm; the last sample sits at
/// or just before (x1, z1).
Grid sr_grid(double x0_mm, double x1_mm, double z0_mm, double z1_mm, double pitch_um = 13.5);

/// Accumulators filled by rasterizing every link.
struct LinkRaster {
  ImageD weight;
  ImageD speed_sum;
  ImageD vx_sum;
  ImageD vz_sum;
};

/// One unit of weight per step along the link's major axis, split linearly
/// between the two nearest pixels across it. Steps cover the half-open major
/// range so consecutive links do not share a sample.
void rasterize_link(LinkRaster& acc, const Grid& grid, const TrackPoint& a, const TrackPoint& b);

/// Tracks shorter than min_len are skipped.
LinkRaster rasterize_tracks(const std::vector<Track>& tracks, const Grid& grid, int min_len = 4);

struct SrMaps {
  Grid grid;
  double wavelength_um = 641.7;
  ImageD density_raw;  // unsmoothed link weight
  ImageD density;      // Gaussian, FWHM = lambda / 4
  ImageD speed;        // mm/s, NaN where undefined
  ImageD direction;    // rad, atan2(-vz, vx) so upward on screen is +pi/2; NaN where undefined
};

ImageD density_map(const std::vector<Track>& tracks, const RenderOptions& opt);
ImageD speed_map(const std::vector<Track>& tracks, const RenderOptions& opt);
ImageD direction_map(const std::vector<Track>& tracks, const RenderOptions& opt);
SrMaps render_maps(const std::vector<Track>& tracks, const RenderOptions& opt);

/// Warm layer carries upward-moving bubbles (vz < 0), cold layer downward;
/// bubbles with vz == 0 split evenly between both.
struct AnimationFrame {
  double time_s = 0.0;
  ImageD warm;
  ImageD cold;
};

struct AnimationOptions {
  double acquisition_rate = 305.0;  // Hz of the tracked frames
  double output_rate = 305.0;       // frames per second of acquisition time
  double blob_fwhm_um = 160.4;
  int min_track_len = 4;
  int max_frames = 0;  // 0 keeps every frame
};

std::vector<AnimationFrame> animate(const std::vector<Track>& tracks, const Grid& grid, const AnimationOptions& opt);

// Export.
using Rgb = std::array<std::uint8_t, 3>;
Rgb hsv_to_rgb(double h, double s, double v);  // h in [0, 1)

/// Hue from value (speed or direction) scaled over [lo, hi], brightness from
/// density normalized to its 99.5th percentile.
Image<Rgb> hsv_composite(const ImageD& hue_source, double lo, double hi, const ImageD& density);
Image<Rgb> animation_rgb(const AnimationFrame& f, double scale);

/// 16-bit binary PGM scaled so the maximum finite value maps to 65535.
void write_pgm16(const std::string& path, const ImageD& img);
void write_png(const std::string& path, const Image<Rgb>& img);

}  // namespace ulm
