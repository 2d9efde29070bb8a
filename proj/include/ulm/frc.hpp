#pragma once

// Fourier ring correlation between two half-data reconstructions.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/tracker.hpp"

namespace ulm {

enum class FrcStatus {
  Resolved,         // curve crosses the threshold
  BelowGridLimit,   // never crosses: resolution <= 2 pitch
  Undefined,        // below threshold already at the first ring, or empty
};

struct FrcResult {
  std::vector<double> freq_per_mm;  // ring centre frequencies, ring 1 onwards
  std::vector<double> frc;
  std::vector<double> half_bit;
  std::vector<int> ring_pixels;
  FrcStatus status = FrcStatus::Undefined;
  double crossing_per_mm = 0.0;
  double resolution_um = 0.0;  // 1/crossing, or 2 pitch when below the grid limit
};

/// Half-bit information threshold for a ring of n pixels.
double half_bit_threshold(double n);

/// Both images share the square pitch.
FrcResult frc(const ImageD& a, const ImageD& b, double pitch_mm);

/// Random half split of the tracks (seeded), unsmoothed density maps, FRC.
FrcResult frc_resolution(const std::vector<Track>& tracks, const Grid& grid, std::uint64_t split_seed,
                         int min_track_len = 4);

void write_frc_csv(std::ostream& os, const FrcResult& r);

}  // namespace ulm
