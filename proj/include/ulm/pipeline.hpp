#pragma once

// Configuration and on-disk stages of the processing chain.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ulm/beamform.hpp"
#include "ulm/localize.hpp"
#include "ulm/moco.hpp"
#include "ulm/phantom.hpp"
#include "ulm/tracker.hpp"

namespace ulm {

struct CrossSectionSpec {
  Vec2 p0, p1;  // mm
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string mode = "image";  // image | channel

  // acquisition
  ProbeGeometry probe;
  int pulses_per_angle = 3;
  double duration_s = 1.0;

  nlohmann::json phantom = nlohmann::json::object();  // scene description

  // image-domain synthesis
  Grid grid;  // CEUS / B-mode raster (both modes)
  double psf_sigma_rows_px = 1.2;
  double psf_sigma_cols_px = 2.0;
  double ceus_noise = 0.02;
  double bmode_noise = 0.02;

  // channel-domain synthesis and beamforming
  double depth_min_mm = 5.0;
  double depth_max_mm = 30.0;
  int beams = 128;
  double channel_noise = 0.0;
  BeamformOptions beamform;
  bool clutter_filter = true;

  bool moco_enabled = true;
  MocoOptions moco;
  LocalizeOptions localize;
  TrackerOptions track;

  double render_pitch_um = 13.5;
  double wavelength_um = 641.7;
  int animation_frames = 30;
  std::uint64_t frc_seed = 11;

  double diameter_bin_um = 50.0;
  double diameter_cap_um = 1500.0;
  double speed_bin_mms = 5.0;
  std::vector<CrossSectionSpec> cross_sections;

  double frame_rate() const;
};

/// Missing keys take defaults; malformed or out-of-range values raise ConfigInvalid.
PipelineConfig parse_config(const nlohmann::json& j);
nlohmann::json config_to_json(const PipelineConfig& c);
PipelineConfig load_config(const std::filesystem::path& p);

enum class Stage { Phantom, Beamform, Moco, Localize, Track, Render, Quantify };
const std::vector<Stage>& all_stages();
std::string stage_name(Stage s);
Stage stage_from(const std::string& s);

struct StageReport {
  Stage stage;
  bool cached = false;
  std::string key;
};

/// Runs one stage reading its inputs from out_dir. With use_cache, a stage
/// whose input hashes and config are unchanged is skipped after its recorded
/// outputs are verified.
StageReport run_stage(Stage s, const PipelineConfig& cfg, const std::filesystem::path& out_dir, bool use_cache);
std::vector<StageReport> run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir);

/// Process exit code for an error category.
int exit_code(ErrorCode c);

}  // namespace ulm
