#include "ulm/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ulm/frc.hpp"
#include "ulm/io.hpp"
#include "ulm/quantify.hpp"
#include "ulm/render.hpp"

namespace ulm {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { fail(ErrorCode::ConfigInvalid, "config: " + msg); }

void check(bool ok, const std::string& msg) {
  if (!ok) bad(msg);
}

template <class T>
T get(const json& sec, const char* key, T def) {
  if (!sec.is_object() || !sec.contains(key) || sec[key].is_null()) return def;
  try {
    return sec[key].get<T>();
  } catch (const json::exception& e) {
    bad(std::string("key '") + key + "': " + e.what());
  }
}

json section(const json& j, const char* name) {
  if (!j.contains(name)) return json::object();
  if (!j[name].is_object()) bad(std::string("section '") + name + "' must be an object");
  return j[name];
}

Vec2 vec2(const json& j, const char* what) {
  try {
    const auto v = j.get<std::vector<double>>();
    if (v.size() == 2) return {v[0], v[1]};
  } catch (const json::exception&) {
  }
  bad(std::string(what) + " must be a [x, z] pair");
}

std::string weighting_name(Weighting w) { return w == Weighting::Das ? "das" : "cv"; }

}  // namespace

double PipelineConfig::frame_rate() const {
  return compounded_frame_rate(probe.prf_hz, static_cast<int>(probe.steering_angles_deg.size()), pulses_per_angle);
}

PipelineConfig parse_config(const json& j) {
  if (!j.is_object()) bad("top level must be an object");
  PipelineConfig c;
  c.seed = get<std::uint64_t>(j, "seed", c.seed);
  c.mode = get<std::string>(j, "mode", c.mode);
  check(c.mode == "image" || c.mode == "channel", "mode must be 'image' or 'channel'");

  const json acq = section(j, "acquisition");
  auto& p = c.probe;
  p.prf_hz = get(acq, "prf_hz", p.prf_hz);
  p.steering_angles_deg = get(acq, "angles", p.steering_angles_deg);
  p.virtual_source_mm = get(acq, "virtual_source_mm", p.virtual_source_mm);
  p.element_count = get(acq, "element_count", p.element_count);
  p.pitch_mm = get(acq, "pitch_mm", p.pitch_mm);
  p.center_frequency_mhz = get(acq, "center_frequency_mhz", p.center_frequency_mhz);
  p.sample_rate_mhz = get(acq, "sample_rate_mhz", p.sample_rate_mhz);
  c.pulses_per_angle = get(acq, "pulses_per_angle", c.pulses_per_angle);
  c.duration_s = get(acq, "duration_s", c.duration_s);
  check(!p.steering_angles_deg.empty(), "acquisition.angles must not be empty");
  check(p.prf_hz > 0.0, "acquisition.prf_hz must be positive");
  check(c.pulses_per_angle >= 1, "acquisition.pulses_per_angle must be >= 1");
  check(c.duration_s > 0.0, "acquisition.duration_s must be positive");
  try {
    p.validate();
  } catch (const Error& e) {
    bad(e.what());
  }

  c.phantom = section(j, "phantom");

  const json img = section(j, "image");
  if (img.contains("grid")) {
    c.grid = grid_from_json(img["grid"]);
  } else {
    c.grid.rows = 64;
    c.grid.cols = 64;
    c.grid.x0_mm = -3.2;
    c.grid.z0_mm = 16.8;
  }
  const auto sig = get<std::vector<double>>(img, "psf_sigma_px", {c.psf_sigma_rows_px, c.psf_sigma_cols_px});
  check(sig.size() == 2 && sig[0] > 0.0 && sig[1] > 0.0, "image.psf_sigma_px must be two positive numbers");
  c.psf_sigma_rows_px = sig[0];
  c.psf_sigma_cols_px = sig[1];
  c.ceus_noise = get(img, "ceus_noise", c.ceus_noise);
  c.bmode_noise = get(img, "bmode_noise", c.bmode_noise);
  check(c.ceus_noise >= 0.0 && c.bmode_noise >= 0.0, "image noise levels must be non-negative");

  const json ch = section(j, "channel");
  c.depth_min_mm = get(ch, "depth_min_mm", c.depth_min_mm);
  c.depth_max_mm = get(ch, "depth_max_mm", c.depth_max_mm);
  c.beams = get(ch, "beams", c.beams);
  c.channel_noise = get(ch, "noise_std", c.channel_noise);
  check(c.depth_max_mm > c.depth_min_mm && c.depth_min_mm >= 0.0, "channel depth range invalid");
  check(c.beams >= 2, "channel.beams must be >= 2");

  const json bf = section(j, "beamform");
  c.beamform.apodization = apodization_from(get<std::string>(bf, "apodization", "none"));
  const std::string w = get<std::string>(bf, "weighting", "cv");
  check(w == "cv" || w == "das", "beamform.weighting must be 'cv' or 'das'");
  c.beamform.weighting = w == "cv" ? Weighting::CoherenceVariance : Weighting::Das;
  c.beamform.cv_eps = get(bf, "cv_eps", c.beamform.cv_eps);
  c.beamform.motion_correction = get(bf, "moco_angles", c.beamform.motion_correction);
  c.clutter_filter = get(bf, "clutter_filter", c.clutter_filter);

  const json mo = section(j, "moco");
  c.moco_enabled = get(mo, "enabled", c.moco_enabled);
  c.moco.svd_keep_fraction = get(mo, "svd_keep_fraction", c.moco.svd_keep_fraction);
  c.moco.ffd.spacings = get(mo, "bspline_spacing_px", c.moco.ffd.spacings);
  c.moco.gating_min_s = get(mo, "gating_min_s", c.moco.gating_min_s);
  c.moco.gating_max_s = get(mo, "gating_max_s", c.moco.gating_max_s);
  c.moco.bspline = get(mo, "bspline", c.moco.bspline);
  check(c.moco.svd_keep_fraction > 0.0 && c.moco.svd_keep_fraction < 1.0, "moco.svd_keep_fraction must be in (0, 1)");
  check(!c.moco.ffd.spacings.empty(), "moco.bspline_spacing_px must not be empty");
  for (double s : c.moco.ffd.spacings) check(s >= 2.0, "moco.bspline_spacing_px entries must be >= 2");
  check(c.moco.gating_min_s > 0.0 && c.moco.gating_max_s >= c.moco.gating_min_s, "moco gating window invalid");
  if (mo.contains("order")) {
    c.moco.order.clear();
    for (const auto& s : get<std::vector<std::string>>(mo, "order", {})) {
      try {
        c.moco.order.push_back(motion_stage_from(s));
      } catch (const Error& e) {
        bad(e.what());
      }
    }
  }
  validate_stage_order(c.moco.order);
  c.moco.intra = std::find(c.moco.order.begin(), c.moco.order.end(), MotionStage::Intra) != c.moco.order.end();
  c.moco.inter = std::find(c.moco.order.begin(), c.moco.order.end(), MotionStage::Inter) != c.moco.order.end();

  const json lo = section(j, "localize");
  auto& L = c.localize;
  L.ncc_threshold = get(lo, "ncc_threshold", L.ncc_threshold);
  L.grid_um = get(lo, "grid_um", L.grid_um);
  L.regions = get(lo, "psf_regions", L.regions);
  L.psf_singles = get(lo, "psf_singles", L.psf_singles);
  L.sensitivity = get(lo, "sensitivity", L.sensitivity);
  L.noise_mads = get(lo, "noise_mads", L.noise_mads);
  L.psf_min_snr = get(lo, "psf_min_snr", L.psf_min_snr);
  check(L.psf_min_snr >= 0.0, "localize.psf_min_snr must be non-negative");
  check(L.ncc_threshold > -1.0 && L.ncc_threshold < 1.0, "localize.ncc_threshold must be in (-1, 1)");
  check(L.grid_um > 0.0, "localize.grid_um must be positive");
  check(L.regions >= 1 && L.psf_singles >= 1, "localize.psf_regions and psf_singles must be >= 1");

  const json tr = section(j, "track");
  auto& T = c.track;
  T.v_max_mms = get(tr, "v_max_mms", T.v_max_mms);
  T.min_track_len = get(tr, "min_track_len", T.min_track_len);
  T.fuzzy_windows = get(tr, "fuzzy_windows", T.fuzzy_windows);
  const auto range = get<std::vector<double>>(tr, "fuzzy_window_range", {T.window_lo, T.window_hi});
  check(range.size() == 2, "track.fuzzy_window_range must have two entries");
  T.window_lo = range[0];
  T.window_hi = range[1];
  T.sigma_loc_mm = get(tr, "sigma_loc_um", T.sigma_loc_mm * 1e3) * 1e-3;
  T.q = get(tr, "q", T.q);
  const std::string init = get<std::string>(tr, "init", "fuzzy");
  check(init == "fuzzy" || init == "zero", "track.init must be 'fuzzy' or 'zero'");
  T.init = init == "fuzzy" ? InitMode::Fuzzy : InitMode::Zero;
  T.frame_rate = c.frame_rate();
  try {
    T.validate();
  } catch (const Error& e) {
    bad(e.what());
  }

  const json re = section(j, "render");
  c.render_pitch_um = get(re, "pitch_um", c.render_pitch_um);
  c.wavelength_um = get(re, "wavelength_um", p.wavelength_mm() * 1e3);
  c.animation_frames = get(re, "animation_frames", c.animation_frames);
  c.frc_seed = get(re, "frc_seed", c.frc_seed);
  check(c.render_pitch_um > 0.0 && c.render_pitch_um <= 13.5 + 1e-9, "render.pitch_um must be in (0, 13.5]");
  check(c.wavelength_um > 0.0, "render.wavelength_um must be positive");
  check(c.animation_frames >= 0, "render.animation_frames must be >= 0");

  const json qu = section(j, "quantify");
  c.diameter_bin_um = get(qu, "diameter_bin_um", c.diameter_bin_um);
  c.diameter_cap_um = get(qu, "diameter_cap_um", c.diameter_cap_um);
  c.speed_bin_mms = get(qu, "speed_bin_mms", c.speed_bin_mms);
  check(c.diameter_bin_um > 0.0 && c.diameter_cap_um > 0.0 && c.speed_bin_mms > 0.0, "quantify bins must be positive");
  if (qu.contains("cross_sections")) {
    if (!qu["cross_sections"].is_array()) bad("quantify.cross_sections must be an array");
    for (const auto& s : qu["cross_sections"]) {
      if (!s.is_object() || !s.contains("p0") || !s.contains("p1")) bad("cross section needs p0 and p1");
      c.cross_sections.push_back({vec2(s["p0"], "p0"), vec2(s["p1"], "p1")});
    }
  }
  return c;
}

json config_to_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["mode"] = c.mode;
  const auto& p = c.probe;
  j["acquisition"] = {{"prf_hz", p.prf_hz},
                      {"angles", p.steering_angles_deg},
                      {"virtual_source_mm", p.virtual_source_mm},
                      {"element_count", p.element_count},
                      {"pitch_mm", p.pitch_mm},
                      {"center_frequency_mhz", p.center_frequency_mhz},
                      {"sample_rate_mhz", p.sample_rate_mhz},
                      {"pulses_per_angle", c.pulses_per_angle},
                      {"duration_s", c.duration_s}};
  j["phantom"] = c.phantom;
  j["image"] = {{"grid", grid_to_json(c.grid)},
                {"psf_sigma_px", {c.psf_sigma_rows_px, c.psf_sigma_cols_px}},
                {"ceus_noise", c.ceus_noise},
                {"bmode_noise", c.bmode_noise}};
  j["channel"] = {{"depth_min_mm", c.depth_min_mm},
                  {"depth_max_mm", c.depth_max_mm},
                  {"beams", c.beams},
                  {"noise_std", c.channel_noise}};
  j["beamform"] = {{"apodization", c.beamform.apodization == Apodization::Hann ? "hann" : "none"},
                   {"weighting", weighting_name(c.beamform.weighting)},
                   {"cv_eps", c.beamform.cv_eps},
                   {"moco_angles", c.beamform.motion_correction},
                   {"clutter_filter", c.clutter_filter}};
  std::vector<std::string> order;
  for (auto s : c.moco.order) order.push_back(s == MotionStage::Intra ? "intra" : "inter");
  j["moco"] = {{"enabled", c.moco_enabled},
               {"svd_keep_fraction", c.moco.svd_keep_fraction},
               {"bspline_spacing_px", c.moco.ffd.spacings},
               {"bspline", c.moco.bspline},
               {"gating_min_s", c.moco.gating_min_s},
               {"gating_max_s", c.moco.gating_max_s},
               {"order", order}};
  const auto& L = c.localize;
  j["localize"] = {{"ncc_threshold", L.ncc_threshold}, {"grid_um", L.grid_um},         {"psf_regions", L.regions},
                   {"psf_singles", L.psf_singles},     {"sensitivity", L.sensitivity}, {"noise_mads", L.noise_mads},
                   {"psf_min_snr", L.psf_min_snr}};
  const auto& T = c.track;
  j["track"] = {{"v_max_mms", T.v_max_mms},
                {"min_track_len", T.min_track_len},
                {"fuzzy_windows", T.fuzzy_windows},
                {"fuzzy_window_range", {T.window_lo, T.window_hi}},
                {"sigma_loc_um", T.sigma_loc_mm * 1e3},
                {"q", T.q < 0.0 ? json(nullptr) : json(T.q)},
                {"init", T.init == InitMode::Fuzzy ? "fuzzy" : "zero"}};
  j["render"] = {{"pitch_um", c.render_pitch_um},
                 {"wavelength_um", c.wavelength_um},
                 {"animation_frames", c.animation_frames},
                 {"frc_seed", c.frc_seed}};
  json cs = json::array();
  for (const auto& s : c.cross_sections) cs.push_back({{"p0", {s.p0.x, s.p0.z}}, {"p1", {s.p1.x, s.p1.z}}});
  j["quantify"] = {{"diameter_bin_um", c.diameter_bin_um},
                   {"diameter_cap_um", c.diameter_cap_um},
                   {"speed_bin_mms", c.speed_bin_mms},
                   {"cross_sections", cs}};
  return j;
}

PipelineConfig load_config(const fs::path& p) {
  if (!fs::exists(p)) fail(ErrorCode::MissingInput, "config file not found: " + p.string());
  json j;
  try {
    j = json::parse(read_file(p));
  } catch (const json::exception& e) {
    bad(std::string("cannot parse ") + p.string() + ": " + e.what());
  }
  return parse_config(j);
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s{Stage::Phantom, Stage::Beamform, Stage::Moco, Stage::Localize,
                                    Stage::Track,   Stage::Render,   Stage::Quantify};
  return s;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::Phantom: return "phantom";
    case Stage::Beamform: return "beamform";
    case Stage::Moco: return "moco";
    case Stage::Localize: return "localize";
    case Stage::Track: return "track";
    case Stage::Render: return "render";
    case Stage::Quantify: return "quantify";
  }
  return "?";
}

Stage stage_from(const std::string& s) {
  for (Stage st : all_stages())
    if (stage_name(st) == s) return st;
  fail(ErrorCode::ConfigInvalid, "unknown stage '" + s + "'");
}

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::ConfigInvalid: return 2;
    case ErrorCode::MissingInput: return 3;
    case ErrorCode::HashMismatch: return 4;
    case ErrorCode::Numerical: return 5;
  }
  return 1;
}

namespace {

// ---- stage plumbing ----

struct StageIo {
  std::vector<std::string> inputs;      // paths relative to the output root
  std::vector<std::string> outputs;
  std::vector<std::string> config_keys;  // config sections the stage depends on
};

StageIo stage_io(Stage s, const PipelineConfig& cfg) {
  const bool image = cfg.mode == "image";
  switch (s) {
    case Stage::Phantom:
      return {{}, image ? std::vector<std::string>{"phantom/truth.csv", "phantom/bmode", "phantom/ceus"}
                        : std::vector<std::string>{"phantom/truth.csv", "phantom/channels"},
              {"seed", "mode", "acquisition", "phantom", "image", "channel"}};
    case Stage::Beamform:
      return {image ? std::vector<std::string>{"phantom/bmode", "phantom/ceus"} : std::vector<std::string>{"phantom/channels"},
              {"beamform/bmode", "beamform/ceus"},
              {"mode", "beamform", "channel", "image"}};
    case Stage::Moco:
      return {{"beamform/bmode", "beamform/ceus"}, {"moco/gating.json", "moco/motion", "moco/ceus"}, {"moco"}};
    case Stage::Localize:
      return {{"moco/ceus"}, {"localize/psf", "localize/localizations.csv"}, {"localize"}};
    case Stage::Track:
      return {{"localize/localizations.csv", "moco/ceus"}, {"track/tracks.csv", "track/model.json"}, {"track", "acquisition"}};
    case Stage::Render:
      return {{"track/tracks.csv", "moco/ceus"},
              {"render/maps", "render/density.pgm", "render/speed.png", "render/direction.png", "render/frc.csv",
               "render/frc.json"},
              {"render", "track"}};
    case Stage::Quantify:
      return {{"render/maps"},
              {"quantify/diameter_hist.csv", "quantify/speed_hist.csv", "quantify/speed_fit.json",
               "quantify/cross_sections.json"},
              {"quantify"}};
  }
  return {};
}

std::string path_hash(const fs::path& p, bool verify) {
  if (fs::is_directory(p)) return verify ? read_container(p).provenance() : container_provenance(p);
  if (!fs::exists(p)) fail(ErrorCode::MissingInput, "missing input: " + p.string());
  return sha256_file(p);
}

json load_cache(const fs::path& out) {
  const fs::path p = out / "cache.json";
  if (!fs::exists(p)) return json::object();
  try {
    return json::parse(read_file(p));
  } catch (const json::exception&) {
    return json::object();
  }
}

void write_json(const fs::path& p, const json& j) { atomic_write(p, j.dump(2) + "\n"); }

template <class F>
void write_text(const fs::path& p, F&& fill) {
  std::ostringstream os;
  fill(os);
  atomic_write(p, os.str());
}

ImageSequence load_sequence(const fs::path& p) { return sequence_from_container(read_container(p)); }

void save_sequence(const fs::path& p, const ImageSequence& s) { write_container(p, sequence_to_container(s)); }

// ---- stages ----

void stage_phantom(const PipelineConfig& cfg, const fs::path& out) {
  const PhantomScene scene = make_scene(cfg.phantom);
  const double f = cfg.frame_rate();
  const GroundTruth truth = simulate_bubbles(scene, cfg.duration_s, f, cfg.seed);
  write_text(out / "phantom/truth.csv", [&](std::ostream& os) { write_ground_truth_csv(os, truth); });
  if (cfg.mode == "image") {
    const Psf psf = Psf::gaussian(
        cfg.grid.rows, cfg.grid.cols, [&](double, double) { return std::pair{cfg.psf_sigma_rows_px, cfg.psf_sigma_cols_px}; });
    ImageSequence ceus = render_ceus(truth, psf, cfg.grid, {cfg.ceus_noise, true, cfg.seed});
    BmodeRenderOptions bo;
    bo.noise_level = cfg.bmode_noise;
    bo.wavelength_mm = cfg.probe.wavelength_mm();
    bo.seed = cfg.seed;
    ImageSequence bmode = render_bmode(truth, scene, cfg.grid, bo);
    ceus.frame_rate = bmode.frame_rate = f;
    save_sequence(out / "phantom/bmode", bmode);
    save_sequence(out / "phantom/ceus", ceus);
    return;
  }
  ChannelSynthesisOptions co;
  co.frame_count = truth.frame_count;
  co.depth_max_mm = cfg.depth_max_mm + 2.0;
  co.noise_std = cfg.channel_noise;
  co.seed = cfg.seed;
  const auto data = synthesize_channels(truth, scene, cfg.probe, co);
  Container c;
  c.meta["kind"] = "channels";
  c.meta["frame_rate"] = f;
  std::vector<int> frames, angle_index;
  std::vector<double> angle_deg;
  ArrayData a;
  a.name = "pulses";
  const int E = data.empty() ? 0 : data[0].pulses[0].rows(), S = data.empty() ? 0 : data[0].pulses[0].cols();
  a.shape = {static_cast<int>(data.size()), 3, E, S};
  a.values.reserve(data.size() * 3 * E * S);
  for (const auto& t : data) {
    frames.push_back(t.frame);
    angle_index.push_back(t.angle_index);
    angle_deg.push_back(t.angle_deg);
    for (const auto& pl : t.pulses)
      for (double v : pl) a.values.push_back(static_cast<float>(v));
  }
  c.meta["frames"] = frames;
  c.meta["angle_index"] = angle_index;
  c.meta["angle_deg"] = angle_deg;
  c.arrays.push_back(std::move(a));
  write_container(out / "phantom/channels", c);
}

void stage_beamform(const PipelineConfig& cfg, const fs::path& out) {
  if (cfg.mode == "image") {
    save_sequence(out / "beamform/bmode", load_sequence(out / "phantom/bmode"));
    save_sequence(out / "beamform/ceus", load_sequence(out / "phantom/ceus"));
    return;
  }
  const Container c = read_container(out / "phantom/channels");
  const ArrayData& a = c.array("pulses");
  if (a.shape.size() != 4 || a.shape[1] != 3) fail(ErrorCode::HashMismatch, "channel container has an unexpected shape");
  std::vector<ChannelTriplet> data(a.shape[0]);
  std::vector<int> frames, angle_index;
  std::vector<double> angle_deg;
  try {
    frames = c.meta.at("frames").get<std::vector<int>>();
    angle_index = c.meta.at("angle_index").get<std::vector<int>>();
    angle_deg = c.meta.at("angle_deg").get<std::vector<double>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::HashMismatch, std::string("channel container meta: ") + e.what());
  }
  const int E = a.shape[2], S = a.shape[3];
  std::size_t k = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].frame = frames.at(i);
    data[i].angle_index = angle_index.at(i);
    data[i].angle_deg = angle_deg.at(i);
    for (auto& pl : data[i].pulses) {
      pl = ImageD(E, S);
      for (auto& v : pl) v = a.values[k++];
    }
  }
  const PolarGrid polar = PolarGrid::for_probe(cfg.probe, cfg.depth_min_mm, cfg.depth_max_mm, cfg.beams);
  const double f = cfg.frame_rate();
  BeamformSequenceOptions ce;
  ce.frame = cfg.beamform;
  ce.frame.am = true;
  ce.clutter_filter = cfg.clutter_filter;
  ce.allow_outside = true;
  ImageSequence ceus = beamform_sequence(data, cfg.probe, polar, cfg.grid, f, ce);
  BeamformSequenceOptions bm = ce;
  bm.frame.am = false;
  bm.frame.weighting = Weighting::Das;
  bm.frame.motion_correction = false;
  bm.clutter_filter = false;
  ImageSequence bmode = beamform_sequence(data, cfg.probe, polar, cfg.grid, f, bm);
  bmode.kind = SequenceKind::BMode;
  save_sequence(out / "beamform/bmode", bmode);
  save_sequence(out / "beamform/ceus", ceus);
}

void stage_moco(const PipelineConfig& cfg, const fs::path& out) {
  const ImageSequence bmode = load_sequence(out / "beamform/bmode");
  const ImageSequence ceus = load_sequence(out / "beamform/ceus");
  json gating;
  if (!cfg.moco_enabled) {
    gating["systole_starts"] = json::array();
    gating["diastole_windows"] = json::array({json::array({0, static_cast<int>(ceus.size())})});
    write_json(out / "moco/gating.json", gating);
    write_container(out / "moco/motion", motion_to_container({}, ceus.grid, {}));
    save_sequence(out / "moco/ceus", ceus);
    return;
  }
  const MocoResult r = correct_motion(bmode, ceus, cfg.moco);
  gating["systole_starts"] = r.gating.systole_starts;
  json win = json::array();
  for (const auto& [a, b] : r.gating.diastole_windows) win.push_back({a, b});
  gating["diastole_windows"] = win;
  write_json(out / "moco/gating.json", gating);
  write_container(out / "moco/motion", motion_to_container(r.fields, ceus.grid, r.corrected.frame_index));
  save_sequence(out / "moco/ceus", r.corrected);
}

void stage_localize(const PipelineConfig& cfg, const fs::path& out) {
  const ImageSequence ceus = load_sequence(out / "moco/ceus");
  const Psf psf = estimate_psfs(ceus, cfg.localize);
  const auto locs = localize_sequence(ceus, psf, cfg.localize);
  write_container(out / "localize/psf", psf_to_container(psf));
  write_text(out / "localize/localizations.csv", [&](std::ostream& os) { write_localizations_csv(os, locs); });
}

ImageD max_projection(const ImageSequence& s) {
  ImageD mip(s.grid.rows, s.grid.cols, 0.0);
  for (const auto& f : s.frames)
    for (std::size_t i = 0; i < mip.size(); ++i) mip[i] = std::max(mip[i], f[i]);
  return mip;
}

void stage_track(const PipelineConfig& cfg, const fs::path& out) {
  std::istringstream is(read_file(out / "localize/localizations.csv"));
  const auto locs = read_localizations_csv(is);
  const ImageSequence ceus = load_sequence(out / "moco/ceus");
  const ImageD mip = max_projection(ceus);
  TrackerOptions opt = cfg.track;
  opt.frame_rate = ceus.frame_rate;
  const TrackingResult r = track_sequence(locs, opt, MipView{&mip, &ceus.grid});
  const auto tracks = r.long_tracks(opt.min_track_len);
  write_text(out / "track/tracks.csv", [&](std::ostream& os) { write_tracks_csv(os, tracks); });
  json m;
  m["frame_rate"] = opt.frame_rate;
  m["q"] = r.model.q;
  m["S_det"] = r.model.S_det;
  m["S"] = {{r.model.S(0, 0), r.model.S(0, 1)}, {r.model.S(1, 0), r.model.S(1, 1)}};
  m["sigma_e2_mm2"] = r.shat ? json(r.shat->sigma_e2) : json(nullptr);
  m["residuals"] = r.shat ? r.shat->residuals : 0;
  m["q_clamped"] = r.q_solution ? r.q_solution->clamped : false;
  m["tracks_total"] = r.tracks.size();
  m["tracks_exported"] = tracks.size();
  write_json(out / "track/model.json", m);
}

Grid render_grid(const PipelineConfig& cfg, const Grid& g) {
  return sr_grid(g.x0_mm, g.x_max(), g.z0_mm, g.z_max(), cfg.render_pitch_um);
}

void stage_render(const PipelineConfig& cfg, const fs::path& out) {
  std::istringstream is(read_file(out / "track/tracks.csv"));
  const auto tracks = read_tracks_csv(is);
  const ImageSequence ceus = load_sequence(out / "moco/ceus");
  RenderOptions ro;
  ro.grid = render_grid(cfg, ceus.grid);
  ro.wavelength_um = cfg.wavelength_um;
  ro.min_track_len = cfg.track.min_track_len;
  const SrMaps maps = render_maps(tracks, ro);

  Container c;
  c.meta["kind"] = "sr_maps";
  c.meta["grid"] = grid_to_json(ro.grid);
  c.meta["wavelength_um"] = cfg.wavelength_um;
  auto put = [&](const std::string& name, const ImageD& img) {
    ArrayData a;
    a.name = name;
    a.shape = {1, img.rows(), img.cols()};
    for (double v : img) a.values.push_back(static_cast<float>(v));
    c.arrays.push_back(std::move(a));
  };
  put("density_raw", maps.density_raw);
  put("density", maps.density);
  put("speed", maps.speed);
  put("direction", maps.direction);
  write_container(out / "render/maps", c);

  const fs::path tmp_dir = out / "render";
  fs::create_directories(tmp_dir);
  auto atomically = [&](const fs::path& target, auto&& writer) {
    const fs::path tmp = target.string() + ".part";
    writer(tmp.string());
    fs::rename(tmp, target);
  };
  atomically(out / "render/density.pgm", [&](const std::string& p) { write_pgm16(p, maps.density); });
  double vmax = 0.0;
  for (double v : maps.speed)
    if (std::isfinite(v)) vmax = std::max(vmax, v);
  atomically(out / "render/speed.png",
             [&](const std::string& p) { write_png(p, hsv_composite(maps.speed, 0.0, vmax, maps.density)); });
  atomically(out / "render/direction.png",
             [&](const std::string& p) { write_png(p, hsv_composite(maps.direction, -kPi, kPi, maps.density)); });

  const FrcResult fr = frc_resolution(tracks, ro.grid, cfg.frc_seed, cfg.track.min_track_len);
  write_text(out / "render/frc.csv", [&](std::ostream& os) { write_frc_csv(os, fr); });
  json fj;
  fj["status"] = fr.status == FrcStatus::Resolved ? "resolved"
                 : fr.status == FrcStatus::BelowGridLimit ? "below_grid_limit"
                                                          : "undefined";
  fj["resolution_um"] = fr.status == FrcStatus::Undefined ? json(nullptr) : json(fr.resolution_um);
  write_json(out / "render/frc.json", fj);

  if (cfg.animation_frames > 0) {
    AnimationOptions ao;
    ao.acquisition_rate = ao.output_rate = ceus.frame_rate;
    ao.blob_fwhm_um = cfg.wavelength_um / 4.0;
    ao.min_track_len = cfg.track.min_track_len;
    ao.max_frames = cfg.animation_frames;
    const auto frames = animate(tracks, ro.grid, ao);
    double scale = 0.0;
    for (const auto& f : frames)
      for (std::size_t i = 0; i < f.warm.size(); ++i) scale = std::max({scale, f.warm[i], f.cold[i]});
    fs::create_directories(out / "render/animation");
    for (std::size_t k = 0; k < frames.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%04zu.png", k);
      atomically(out / "render/animation" / name, [&](const std::string& p) { write_png(p, animation_rgb(frames[k], scale)); });
    }
  }
}

ImageD map_from(const Container& c, const std::string& name) {
  const ArrayData& a = c.array(name);
  if (a.shape.size() != 3 || a.shape[0] != 1) fail(ErrorCode::HashMismatch, "map array has an unexpected shape");
  ImageD img(a.shape[1], a.shape[2]);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = a.values[i];
  return img;
}

void stage_quantify(const PipelineConfig& cfg, const fs::path& out) {
  const Container c = read_container(out / "render/maps");
  const Grid grid = grid_from_json(c.meta.at("grid"));
  const ImageD density = map_from(c, "density");
  const ImageD speed = map_from(c, "speed");

  const Mask binary = binarize(density, otsu_threshold(density));
  const Mask skeleton = skeletonize(binary);
  const Histogram dia = diameter_distribution(skeleton, binary, grid.dx_mm * 1e3, cfg.diameter_bin_um, cfg.diameter_cap_um);
  write_text(out / "quantify/diameter_hist.csv", [&](std::ostream& os) { write_histogram_csv(os, dia); });

  const SpeedDistribution sd = speed_distribution(speed, cfg.speed_bin_mms);
  write_text(out / "quantify/speed_hist.csv", [&](std::ostream& os) { write_histogram_csv(os, sd.histogram); });
  json fit = {{"mu", sd.fit.mu},
              {"sigma", sd.fit.sigma},
              {"mean", sd.fit.mean},
              {"std", sd.fit.std},
              {"degenerate", sd.fit.degenerate},
              {"summary", format_mean_std(sd.fit.mean, sd.fit.std)}};
  write_json(out / "quantify/speed_fit.json", fit);

  json cs = json::array();
  for (std::size_t k = 0; k < cfg.cross_sections.size(); ++k) {
    const auto& s = cfg.cross_sections[k];
    const Profile p = cross_section(density, grid, s.p0, s.p1);
    write_text(out / ("quantify/cross_section_" + std::to_string(k) + ".csv"), [&](std::ostream& os) {
      os << "s_um,value\n";
      for (std::size_t i = 0; i < p.s_um.size(); ++i) os << p.s_um[i] << ',' << p.value[i] << '\n';
    });
    json pk = json::array();
    for (const auto& q : p.peaks) pk.push_back({{"position_um", q.position_um}, {"value", q.value}, {"fwhm_um", q.fwhm_um}});
    cs.push_back({{"peaks", pk}, {"separations_um", p.separations_um}, {"troughs", p.troughs}});
  }
  write_json(out / "quantify/cross_sections.json", cs);
}

}  // namespace

StageReport run_stage(Stage s, const PipelineConfig& cfg, const fs::path& out, bool use_cache) {
  const StageIo io = stage_io(s, cfg);
  const json full = config_to_json(cfg);
  std::string key_src = stage_name(s) + "\n";
  for (const auto& k : io.config_keys) key_src += k + "=" + (full.contains(k) ? full[k].dump() : "null") + "\n";
  for (const auto& in : io.inputs) key_src += in + ":" + path_hash(out / in, false) + "\n";
  StageReport rep{s, false, sha256_hex(key_src)};

  json cache = load_cache(out);
  const std::string name = stage_name(s);
  if (use_cache && cache.contains(name) && cache[name].value("key", "") == rep.key) {
    bool present = true;
    for (const auto& o : io.outputs) present = present && fs::exists(out / o);
    if (present) {
      for (const auto& o : io.outputs) {
        const std::string h = path_hash(out / o, true);
        if (cache[name]["outputs"].value(o, "") != h)
          fail(ErrorCode::HashMismatch, "cached output changed on disk: " + (out / o).string());
      }
      rep.cached = true;
      return rep;
    }
  }

  switch (s) {
    case Stage::Phantom: stage_phantom(cfg, out); break;
    case Stage::Beamform: stage_beamform(cfg, out); break;
    case Stage::Moco: stage_moco(cfg, out); break;
    case Stage::Localize: stage_localize(cfg, out); break;
    case Stage::Track: stage_track(cfg, out); break;
    case Stage::Render: stage_render(cfg, out); break;
    case Stage::Quantify: stage_quantify(cfg, out); break;
  }
  json entry;
  entry["key"] = rep.key;
  for (const auto& o : io.outputs) entry["outputs"][o] = path_hash(out / o, false);
  cache = load_cache(out);
  cache[name] = entry;
  write_json(out / "cache.json", cache);
  return rep;
}

std::vector<StageReport> run_pipeline(const PipelineConfig& cfg, const fs::path& out) {
  std::vector<StageReport> reps;
  for (Stage s : all_stages()) reps.push_back(run_stage(s, cfg, out, true));
  return reps;
}

}  // namespace ulm
