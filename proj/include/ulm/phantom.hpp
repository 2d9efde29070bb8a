#pragma once

// Ground-truth scenes and synthetic acquisitions (image-domain CEUS/B-mode
// sequences and raw per-channel amplitude-modulation echoes).

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "json.hpp"

#include "ulm/core.hpp"
#include "ulm/psf.hpp"

namespace ulm {

struct ProbeGeometry {
  int element_count = 80;
  double pitch_mm = 0.27;
  double center_frequency_mhz = 2.4;
  double sound_speed_mps = kSoundSpeedMps;
  double virtual_source_mm = 21.6;  // distance behind the array centre
  std::vector<double> steering_angles_deg{-15.0, -3.0, 9.0, 15.0, 3.0, -9.0};
  double sample_rate_mhz = 9.6;
  double prf_hz = 5490.0;
  double fractional_bandwidth = 0.9;  // -6 dB

  void validate() const;
  double c_mm_per_us() const { return sound_speed_mps * 1e-3; }
  double wavelength_mm() const { return c_mm_per_us() / center_frequency_mhz; }
  double aperture_mm() const { return (element_count - 1) * pitch_mm; }
  double element_x(int e) const { return (e - 0.5 * (element_count - 1)) * pitch_mm; }
  /// Half of the angular field of view seen from the unsteered virtual source (deg).
  double sector_half_angle_deg() const;
  Vec2 virtual_source(double steering_deg) const;
  /// Gaussian pulse envelope standard deviation (us).
  double pulse_sigma_us() const;
  /// Pulses per compounded frame are angles x 3 (AM triplet).
  double compounded_frame_rate() const;
};

double compounded_frame_rate(double prf_hz, int angle_count, int pulses_per_angle);

struct Vessel {
  std::vector<Vec2> centerline;  // mm
  double radius_um = 50.0;
  double mean_speed_mms = 20.0;

  double length_mm() const;
  /// Point and unit tangent at arc length s (clamped to the polyline).
  Vec2 point_at(double s) const;
  Vec2 tangent_at(double s) const;
  /// Distance from p to the centerline polyline.
  double distance_to(Vec2 p) const;
};

struct TissueScatterer {
  Vec2 position;
  double reflectivity = 1.0;
  double nonlinearity = 0.0;
};

/// Cardiac-like motion: global affine breathing drift plus a radial
/// contraction pulse during systole. Displacements map rest positions to
/// observed positions.
struct MotionProgram {
  double period_s = 1.0;
  double diastole_fraction = 2.0 / 3.0;
  double peak_displacement_mm = 0.0;
  Vec2 contraction_center{0.0, 20.0};
  double contraction_radius_mm = 5.0;  // radius of peak radial displacement
  double breathing_amplitude_mm = 0.0;
  double breathing_rotation_deg = 0.0;
  double breathing_period_s = 4.0;
  double cycle_offset_s = 0.1;  // onset of the first systole

  bool enabled() const { return peak_displacement_mm != 0.0 || breathing_amplitude_mm != 0.0 || breathing_rotation_deg != 0.0; }
  /// Systolic contraction level in [0, 1].
  double contraction(double t) const;
  Vec2 displacement(Vec2 rest, double t) const;
  /// Times of systole onsets within [0, duration).
  std::vector<double> systole_onsets(double duration_s) const;
  void validate() const;
};

struct PhantomScene {
  std::vector<Vessel> vessels;
  std::vector<TissueScatterer> tissue;
  MotionProgram motion;
  double bubble_concentration = 0.0;  // bubbles per vessel-mm
  double bubble_nonlinearity = 0.1;   // epsilon of the quadratic scatterer model
  double bubble_reflectivity = 1.0;
  double intensity_sigma = 0.5;       // log-normal shape; unit median
  std::uint64_t seed = 1;

  void validate() const;
};

/// Builds and validates a scene from its JSON description
/// (keys: vessels[], tissue[], tissue_random{}, motion{}, concentration, seed).
PhantomScene make_scene(const nlohmann::json& spec);
nlohmann::json scene_to_json(const PhantomScene& scene);

/// Two straight vessels along x, centred at depth z_mid, `separation_mm` apart.
PhantomScene two_parallel_vessels(double separation_mm, double x_begin, double x_end, double z_mid,
                                  double radius_um, double speed_mms, double concentration, std::uint64_t seed);

/// Uniformly scattered linear tissue inside the box.
void add_random_tissue(PhantomScene& scene, int count, Vec2 min_corner, Vec2 max_corner, std::uint64_t seed);

struct TrajectoryPoint {
  int frame = 0;
  Vec2 position;  // rest-frame mm
  Vec2 velocity;  // mm/s
};

struct BubbleTrajectory {
  int id = 0;
  int vessel = 0;
  double intensity = 1.0;
  std::vector<TrajectoryPoint> points;
};

struct GroundTruth {
  double frame_rate = 305.0;
  int frame_count = 0;
  std::vector<BubbleTrajectory> bubbles;
  MotionProgram motion;

  /// Rest position -> observed position at frame k.
  Vec2 observed(Vec2 rest, int frame) const { return rest + motion.displacement(rest, frame / frame_rate); }
  /// Dense tissue displacement on a grid at frame k, as (ux, uz) in mm.
  std::pair<ImageD, ImageD> displacement_field(const Grid& grid, int frame) const;
  /// Per-frame list of (bubble index, point index) visible in that frame.
  std::vector<std::vector<std::pair<int, int>>> by_frame() const;
};

GroundTruth simulate_bubbles(const PhantomScene& scene, double duration_s, double frame_rate, std::uint64_t seed);

/// Equally spaced bubbles moving along one vessel: spacing d_b (mm), speed v (mm/s).
GroundTruth bubble_train(const Vessel& vessel, double spacing_mm, double speed_mms, int frame_count,
                         double frame_rate, std::uint64_t seed, double intensity_sigma = 0.5);

void write_ground_truth_csv(std::ostream& os, const GroundTruth& truth);

struct CeusRenderOptions {
  double noise_level = 0.0;  // std of additive white noise
  bool motion = false;
  std::uint64_t seed = 1;
};

/// Image-domain CEUS: every visible bubble stamped as its regional PSF scaled
/// by its intensity.
ImageSequence render_ceus(const GroundTruth& truth, const Psf& psf, const Grid& grid, const CeusRenderOptions& opt);

struct BmodeRenderOptions {
  double sigma_rows_px = 1.5;
  double sigma_cols_px = 2.5;
  double wavelength_mm = 0.6417;  // sets the axial phase rotation of the speckle kernel
  double bubble_gain = 0.3;
  double noise_level = 0.0;
  bool motion = true;
  std::uint64_t seed = 1;
};

/// Image-domain linear-envelope B-mode: coherent tissue speckle plus bubbles.
ImageSequence render_bmode(const GroundTruth& truth, const PhantomScene& scene, const Grid& grid,
                           const BmodeRenderOptions& opt);

enum class PulseTag { Full = 0, HalfOdd = 1, HalfEven = 2 };

/// One AM triplet for one steering angle of one frame; each pulse is a
/// [channel][time sample] array.
struct ChannelTriplet {
  int frame = 0;
  int angle_index = 0;
  double angle_deg = 0.0;
  std::array<ImageD, 3> pulses;

  const ImageD& pulse(PulseTag t) const { return pulses[static_cast<int>(t)]; }
};

struct ChannelSynthesisOptions {
  int first_frame = 0;
  int frame_count = 1;
  double depth_max_mm = 40.0;
  double noise_std = 0.0;
  bool include_tissue = true;
  bool include_bubbles = true;
  bool motion = true;
  std::uint64_t seed = 1;
};

/// Echo arrival time (us) from a point scatterer at p to element e for steering angle.
double echo_delay_us(const ProbeGeometry& probe, double steering_deg, Vec2 p, int element);

/// Samples per channel trace needed to cover depth_max_mm.
int channel_sample_count(const ProbeGeometry& probe, double depth_max_mm);

std::vector<ChannelTriplet> synthesize_channels(const GroundTruth& truth, const PhantomScene& scene,
                                                const ProbeGeometry& probe, const ChannelSynthesisOptions& opt);

}  // namespace ulm
