#pragma once

// Frame-to-frame bubble tracking: Kalman prediction, likelihood costs, global
// assignment with dummies and fuzzy velocity seeding of new bubbles.

#include <iosfwd>
#include <optional>
#include <vector>

#include "ulm/fuzzy_init.hpp"
#include "ulm/kalman.hpp"
#include "ulm/localize.hpp"

namespace ulm {

enum class InitMode { Fuzzy, Zero };
enum class PairingMode { Kalman, NearestNeighbour };

struct TrackerOptions {
  double frame_rate = 305.0;
  double v_max_mms = 150.0;
  int min_track_len = 4;
  int fuzzy_windows = 10;
  double window_lo = 0.3;
  double window_hi = 1.2;
  double sigma_loc_mm = 0.0135;  // R = sigma^2 I
  double q = -1.0;               // negative -> estimated from the data
  double gate_factor = 1.2;      // gate radius in units of v_max / f
  int shat_groups = 10;
  InitMode init = InitMode::Fuzzy;
  PairingMode pairing = PairingMode::Kalman;

  double gate_mm() const { return gate_factor * v_max_mms / frame_rate; }
  FuzzyOptions fuzzy() const;
  void validate() const;
};

struct TrackPoint {
  int frame = 0;
  double x_mm = 0.0, z_mm = 0.0;
  double vx_mms = 0.0, vz_mms = 0.0;  // link velocity
  double intensity = 0.0;
  int source = -1;  // index into the input localizations
};

struct Track {
  int id = 0;
  std::vector<TrackPoint> points;
  std::size_t size() const { return points.size(); }
};

struct TrackingResult {
  std::vector<Track> tracks;  // every track, any length
  KalmanModel model;
  std::optional<ShatEstimate> shat;
  std::optional<QSolution> q_solution;

  std::vector<Track> long_tracks(int min_len) const;
};

/// Fits q (unless fixed), then links the localizations frame by frame. Tracks
/// never span a gap in frame numbers.
TrackingResult track_sequence(const std::vector<Localization>& locs, const TrackerOptions& opt,
                              const MipView& mip = {});

/// Localizations grouped by frame number (ascending).
struct FrameTable {
  std::vector<int> numbers;
  std::vector<std::vector<Detection>> detections;
};
FrameTable group_by_frame(const std::vector<Localization>& locs);

struct LinkScore {
  int true_links = 0;     // consecutive-frame pairs of the same bubble in the input
  int correct_links = 0;  // tracked links joining the same bubble
  int wrong_links = 0;
  double accuracy() const { return true_links ? static_cast<double>(correct_links) / true_links : 1.0; }
};

/// truth_id[i] labels localization i.
LinkScore score_links(const std::vector<Track>& tracks, const std::vector<Localization>& locs,
                      const std::vector<int>& truth_id);

void write_tracks_csv(std::ostream& os, const std::vector<Track>& tracks);
std::vector<Track> read_tracks_csv(std::istream& is);

}  // namespace ulm
