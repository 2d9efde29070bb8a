#pragma once

// Microbubble detection and sub-pixel localization on CEUS frames.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/psf.hpp"

namespace ulm {

using Mask = Image<std::uint8_t>;

struct Patch {
  int frame = 0;
  int region = 0;
  int row_min = 0, row_max = 0, col_min = 0, col_max = 0;  // inclusive bounding box
  std::vector<std::pair<int, int>> pixels;                  // (row, col)
  double centroid_row = 0.0, centroid_col = 0.0;

  int height() const { return row_max - row_min + 1; }
  int width() const { return col_max - col_min + 1; }
};

struct Localization {
  int frame = 0;
  double x_um = 0.0;
  double z_um = 0.0;
  double intensity = 0.0;
};

struct LocalizeOptions {
  double ncc_threshold = 0.5;
  double grid_um = 13.5;
  int regions = 5;
  int psf_singles = 10;
  double sensitivity = 0.5;   // fraction of the Gaussian local mean
  double noise_mads = 3.0;    // global floor = median + noise_mads * MAD
  bool psf_fallback = true;   // borrow a neighbouring region's PSF when singles are scarce
  double psf_min_snr = 10.0;  // PSF singles peak above median + this many robust noise stds
};

/// Pixels at or above sensitivity x local mean and above the global noise floor.
Mask adaptive_threshold(const ImageD& frame, double sensitivity = 0.5, double noise_mads = 3.0);

/// 8-connected components of the mask, labelled with the region containing
/// their intensity centroid.
std::vector<Patch> segment_patches(const Mask& mask, const ImageD& frame, int frame_index, int regions = 5);

/// Average of isolated single-bubble patches per region, unit peak.
Psf estimate_psfs(const ImageSequence& seq, const LocalizeOptions& opt = {});

/// NCC of the masked patch against the template; each superthreshold island
/// inside the patch gives one intensity-weighted centroid snapped to the grid.
std::vector<Localization> localize_patch(const Patch& patch, const ImageD& frame, const ImageD& templ,
                                         const Grid& grid, const LocalizeOptions& opt = {});

std::vector<Localization> localize_frame(const ImageD& frame, int frame_index, const Psf& psf, const Grid& grid,
                                         const LocalizeOptions& opt = {});

/// Frame numbers in the output are the sequence's frame_index values.
std::vector<Localization> localize_sequence(const ImageSequence& seq, const Psf& psf, const LocalizeOptions& opt = {});

double snap_to_grid(double v_um, double grid_um);

void write_localizations_csv(std::ostream& os, const std::vector<Localization>& locs);
std::vector<Localization> read_localizations_csv(std::istream& is);

}  // namespace ulm
