#include "ulm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>

#include "ulm/interp.hpp"
#include "ulm/rng.hpp"

namespace ulm {

namespace {

constexpr double kDeg = kPi / 180.0;

[[noreturn]] void config_error(const std::string& what) { fail(ErrorCode::ConfigInvalid, "scene: " + what); }

Vec2 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) config_error("expected [x, z] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

double lognormal_intensity(Rng& rng, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  return std::exp(sigma * n(rng));
}

}  // namespace

// ---------------------------------------------------------------- probe

void ProbeGeometry::validate() const {
  require(element_count > 1, "probe: need at least two elements");
  require(pitch_mm > 0.0, "probe: pitch must be positive");
  require(center_frequency_mhz > 0.0, "probe: centre frequency must be positive");
  require(sound_speed_mps > 0.0, "probe: sound speed must be positive");
  require(virtual_source_mm > 0.0, "probe: virtual source distance must be positive");
  require(!steering_angles_deg.empty(), "probe: no steering angles");
  require(sample_rate_mhz >= 2.0 * center_frequency_mhz, "probe: sample rate below Nyquist for the carrier");
  require(prf_hz > 0.0, "probe: PRF must be positive");
  require(fractional_bandwidth > 0.0, "probe: bandwidth must be positive");
}

double ProbeGeometry::sector_half_angle_deg() const {
  return std::atan(0.5 * element_count * pitch_mm / virtual_source_mm) / kDeg;
}

Vec2 ProbeGeometry::virtual_source(double steering_deg) const {
  const double a = steering_deg * kDeg;
  return {-virtual_source_mm * std::sin(a), -virtual_source_mm * std::cos(a)};
}

double ProbeGeometry::pulse_sigma_us() const {
  const double sigma_f = fractional_bandwidth * center_frequency_mhz / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  return 1.0 / (2.0 * kPi * sigma_f);
}

double compounded_frame_rate(double prf_hz, int angle_count, int pulses_per_angle) {
  require(prf_hz > 0.0 && angle_count > 0 && pulses_per_angle > 0, "compounded_frame_rate: invalid arguments");
  return prf_hz / (angle_count * pulses_per_angle);
}

double ProbeGeometry::compounded_frame_rate() const {
  return ulm::compounded_frame_rate(prf_hz, static_cast<int>(steering_angles_deg.size()), 3);
}

// ---------------------------------------------------------------- vessels

double Vessel::length_mm() const {
  double len = 0.0;
  for (std::size_t i = 1; i < centerline.size(); ++i) len += (centerline[i] - centerline[i - 1]).norm();
  return len;
}

Vec2 Vessel::point_at(double s) const {
  if (centerline.size() == 1) return centerline[0];
  s = std::max(0.0, s);
  for (std::size_t i = 1; i < centerline.size(); ++i) {
    const Vec2 seg = centerline[i] - centerline[i - 1];
    const double len = seg.norm();
    if (s <= len || i + 1 == centerline.size()) return centerline[i - 1] + (std::min(s, len) / len) * seg;
    s -= len;
  }
  return centerline.back();
}

Vec2 Vessel::tangent_at(double s) const {
  if (centerline.size() < 2) return {1.0, 0.0};
  s = std::max(0.0, s);
  for (std::size_t i = 1; i < centerline.size(); ++i) {
    const Vec2 seg = centerline[i] - centerline[i - 1];
    const double len = seg.norm();
    if (s <= len || i + 1 == centerline.size()) return (1.0 / len) * seg;
    s -= len;
  }
  return {1.0, 0.0};
}

double Vessel::distance_to(Vec2 p) const {
  if (centerline.size() == 1) return (p - centerline[0]).norm();
  double best = INFINITY;
  for (std::size_t i = 1; i < centerline.size(); ++i) {
    const Vec2 a = centerline[i - 1], seg = centerline[i] - a;
    const double t = std::clamp((p - a).dot(seg) / seg.dot(seg), 0.0, 1.0);
    best = std::min(best, (p - (a + t * seg)).norm());
  }
  return best;
}

// ---------------------------------------------------------------- motion

double MotionProgram::contraction(double t) const {
  if (peak_displacement_mm == 0.0) return 0.0;
  double tau = std::fmod(t - cycle_offset_s, period_s);
  if (tau < 0.0) tau += period_s;
  const double ts = (1.0 - diastole_fraction) * period_s;
  if (tau < ts / 3.0) {
    const double u = 1.0 - 3.0 * tau / ts;
    return 1.0 - u * u;
  }
  if (tau < ts) return 0.5 * (1.0 + std::cos(kPi * (tau - ts / 3.0) / (2.0 * ts / 3.0)));
  return 0.0;
}

Vec2 MotionProgram::displacement(Vec2 rest, double t) const {
  Vec2 p = rest;
  if (peak_displacement_mm != 0.0) {
    const Vec2 q = rest - contraction_center;
    const double rho = q.norm();
    const double g = contraction(t);
    p -= (g * peak_displacement_mm / contraction_radius_mm * std::exp(1.0 - rho / contraction_radius_mm)) * q;
  }
  if (breathing_amplitude_mm != 0.0 || breathing_rotation_deg != 0.0) {
    const double phase = 2.0 * kPi * t / breathing_period_s;
    const double th = breathing_rotation_deg * kDeg * std::sin(phase);
    const Vec2 q = p - contraction_center;
    const Vec2 rot{std::cos(th) * q.x - std::sin(th) * q.z, std::sin(th) * q.x + std::cos(th) * q.z};
    p = contraction_center + rot + Vec2{0.3 * breathing_amplitude_mm * std::sin(phase), breathing_amplitude_mm * std::sin(phase)};
  }
  return p - rest;
}

std::vector<double> MotionProgram::systole_onsets(double duration_s) const {
  std::vector<double> out;
  if (peak_displacement_mm == 0.0) return out;
  double t = std::fmod(cycle_offset_s, period_s);
  if (t < 0.0) t += period_s;
  for (; t < duration_s; t += period_s) out.push_back(t);
  return out;
}

void MotionProgram::validate() const {
  if (!(period_s > 0.0)) config_error("motion period must be positive");
  if (!(diastole_fraction > 0.0 && diastole_fraction < 1.0)) config_error("diastole fraction must lie in (0, 1)");
  if (!(contraction_radius_mm > 0.0)) config_error("contraction radius must be positive");
  if (!(breathing_period_s > 0.0)) config_error("breathing period must be positive");
}

// ---------------------------------------------------------------- scene

void PhantomScene::validate() const {
  for (const auto& v : vessels) {
    if (v.centerline.empty()) config_error("vessel without centerline");
    if (v.centerline.size() > 1 && !(v.length_mm() > 0.0)) config_error("vessel of zero length");
    for (std::size_t i = 1; i < v.centerline.size(); ++i)
      if (v.centerline[i] == v.centerline[i - 1]) config_error("repeated centerline point");
    if (!(v.radius_um >= 0.0)) config_error("vessel radius must be non-negative");
    if (!(v.mean_speed_mms >= 0.0)) config_error("vessel speed must be non-negative");
  }
  if (!(bubble_concentration >= 0.0)) config_error("concentration must be non-negative");
  if (!(intensity_sigma >= 0.0)) config_error("intensity sigma must be non-negative");
  motion.validate();
}

PhantomScene make_scene(const nlohmann::json& spec) {
  PhantomScene s;
  try {
    s.seed = spec.value("seed", std::uint64_t{1});
    s.bubble_concentration = spec.value("concentration", 0.0);
    s.bubble_nonlinearity = spec.value("bubble_nonlinearity", s.bubble_nonlinearity);
    s.bubble_reflectivity = spec.value("bubble_reflectivity", s.bubble_reflectivity);
    s.intensity_sigma = spec.value("intensity_sigma", s.intensity_sigma);
    for (const auto& jv : spec.value("vessels", nlohmann::json::array())) {
      Vessel v;
      for (const auto& p : jv.at("centerline")) v.centerline.push_back(vec_from_json(p));
      v.radius_um = jv.value("radius_um", v.radius_um);
      v.mean_speed_mms = jv.value("speed_mms", v.mean_speed_mms);
      s.vessels.push_back(std::move(v));
    }
    for (const auto& jt : spec.value("tissue", nlohmann::json::array()))
      s.tissue.push_back({{jt.at("x").get<double>(), jt.at("z").get<double>()},
                          jt.value("reflectivity", 1.0),
                          jt.value("nonlinearity", 0.0)});
    if (spec.contains("motion")) {
      const auto& m = spec["motion"];
      auto& mp = s.motion;
      mp.period_s = m.value("period_s", mp.period_s);
      mp.diastole_fraction = m.value("diastole_fraction", mp.diastole_fraction);
      mp.peak_displacement_mm = m.value("peak_displacement_mm", mp.peak_displacement_mm);
      if (m.contains("center")) mp.contraction_center = vec_from_json(m["center"]);
      mp.contraction_radius_mm = m.value("contraction_radius_mm", mp.contraction_radius_mm);
      mp.breathing_amplitude_mm = m.value("breathing_amplitude_mm", mp.breathing_amplitude_mm);
      mp.breathing_rotation_deg = m.value("breathing_rotation_deg", mp.breathing_rotation_deg);
      mp.breathing_period_s = m.value("breathing_period_s", mp.breathing_period_s);
      mp.cycle_offset_s = m.value("cycle_offset_s", mp.cycle_offset_s);
    }
    if (spec.contains("tissue_random")) {
      const auto& tr = spec["tissue_random"];
      const Vec2 xr = vec_from_json(tr.at("x")), zr = vec_from_json(tr.at("z"));
      add_random_tissue(s, tr.at("count").get<int>(), {xr.x, zr.x}, {xr.z, zr.z}, tr.value("seed", s.seed));
    }
  } catch (const nlohmann::json::exception& e) {
    config_error(e.what());
  }
  s.validate();
  return s;
}

nlohmann::json scene_to_json(const PhantomScene& s) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["concentration"] = s.bubble_concentration;
  j["bubble_nonlinearity"] = s.bubble_nonlinearity;
  j["bubble_reflectivity"] = s.bubble_reflectivity;
  j["intensity_sigma"] = s.intensity_sigma;
  j["vessels"] = nlohmann::json::array();
  for (const auto& v : s.vessels) {
    nlohmann::json jv;
    for (const auto& p : v.centerline) jv["centerline"].push_back({p.x, p.z});
    jv["radius_um"] = v.radius_um;
    jv["speed_mms"] = v.mean_speed_mms;
    j["vessels"].push_back(jv);
  }
  j["tissue"] = nlohmann::json::array();
  for (const auto& t : s.tissue)
    j["tissue"].push_back({{"x", t.position.x}, {"z", t.position.z}, {"reflectivity", t.reflectivity},
                           {"nonlinearity", t.nonlinearity}});
  const auto& m = s.motion;
  j["motion"] = {{"period_s", m.period_s},
                 {"diastole_fraction", m.diastole_fraction},
                 {"peak_displacement_mm", m.peak_displacement_mm},
                 {"center", {m.contraction_center.x, m.contraction_center.z}},
                 {"contraction_radius_mm", m.contraction_radius_mm},
                 {"breathing_amplitude_mm", m.breathing_amplitude_mm},
                 {"breathing_rotation_deg", m.breathing_rotation_deg},
                 {"breathing_period_s", m.breathing_period_s},
                 {"cycle_offset_s", m.cycle_offset_s}};
  return j;
}

PhantomScene two_parallel_vessels(double separation_mm, double x_begin, double x_end, double z_mid, double radius_um,
                                  double speed_mms, double concentration, std::uint64_t seed) {
  PhantomScene s;
  s.seed = seed;
  s.bubble_concentration = concentration;
  for (double sign : {-1.0, 1.0}) {
    const double z = z_mid + sign * 0.5 * separation_mm;
    s.vessels.push_back({{{x_begin, z}, {x_end, z}}, radius_um, speed_mms});
  }
  s.validate();
  return s;
}

void add_random_tissue(PhantomScene& scene, int count, Vec2 lo, Vec2 hi, std::uint64_t seed) {
  if (count < 0) config_error("tissue count must be non-negative");
  Rng rng = make_rng(seed, kStreamTissue);
  std::uniform_real_distribution<double> ux(lo.x, hi.x), uz(lo.z, hi.z);
  std::normal_distribution<double> refl(1.0, 0.3);
  for (int i = 0; i < count; ++i) {
    const double x = ux(rng), z = uz(rng);
    scene.tissue.push_back({{x, z}, std::abs(refl(rng)), 0.0});
  }
}

// ---------------------------------------------------------------- bubbles

std::pair<ImageD, ImageD> GroundTruth::displacement_field(const Grid& grid, int frame) const {
  ImageD ux(grid.rows, grid.cols), uz(grid.rows, grid.cols);
  const double t = frame / frame_rate;
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      const Vec2 d = motion.displacement(grid.position(r, c), t);
      ux(r, c) = d.x;
      uz(r, c) = d.z;
    }
  return {ux, uz};
}

std::vector<std::vector<std::pair<int, int>>> GroundTruth::by_frame() const {
  std::vector<std::vector<std::pair<int, int>>> out(frame_count);
  for (int b = 0; b < static_cast<int>(bubbles.size()); ++b)
    for (int i = 0; i < static_cast<int>(bubbles[b].points.size()); ++i) {
      const int f = bubbles[b].points[i].frame;
      if (f >= 0 && f < frame_count) out[f].push_back({b, i});
    }
  return out;
}

GroundTruth simulate_bubbles(const PhantomScene& scene, double duration_s, double frame_rate, std::uint64_t seed) {
  scene.validate();
  require(duration_s > 0.0 && frame_rate > 0.0, "simulate_bubbles: duration and frame rate must be positive");
  GroundTruth gt;
  gt.frame_rate = frame_rate;
  gt.frame_count = static_cast<int>(std::floor(duration_s * frame_rate + 1e-9));
  gt.motion = scene.motion;
  int next_id = 0;
  for (int vi = 0; vi < static_cast<int>(scene.vessels.size()); ++vi) {
    const Vessel& v = scene.vessels[vi];
    Rng rng = make_rng(seed, kStreamVessel, vi);
    const double len = v.length_mm();
    const double radius = v.radius_um * 1e-3;
    std::uniform_real_distribution<double> offset(-radius, radius);
    auto add = [&](double s0, double t0) {
      BubbleTrajectory b;
      b.vessel = vi;
      const double off = radius > 0.0 ? offset(rng) : 0.0;
      b.intensity = lognormal_intensity(rng, scene.intensity_sigma);
      for (int k = 0; k < gt.frame_count; ++k) {
        const double s = s0 + v.mean_speed_mms * (k / frame_rate - t0);
        if (s < 0.0 || s > len) continue;
        const Vec2 tan = v.tangent_at(s);
        const Vec2 normal{-tan.z, tan.x};
        b.points.push_back({k, v.point_at(s) + off * normal, v.mean_speed_mms * tan});
      }
      if (!b.points.empty()) {
        b.id = next_id++;
        gt.bubbles.push_back(std::move(b));
      }
    };
    if (scene.bubble_concentration == 0.0) continue;
    if (v.mean_speed_mms > 0.0) {
      // Arrivals at the inlet at rate c*v; starting the process one transit
      // time early fills the vessel at t = 0.
      std::exponential_distribution<double> gap(scene.bubble_concentration * v.mean_speed_mms);
      for (double t0 = -len / v.mean_speed_mms + gap(rng); t0 < duration_s; t0 += gap(rng)) add(0.0, t0);
    } else {
      std::poisson_distribution<int> count(scene.bubble_concentration * len);
      std::uniform_real_distribution<double> pos(0.0, len);
      const int n = count(rng);
      for (int i = 0; i < n; ++i) add(pos(rng), 0.0);
    }
  }
  return gt;
}

GroundTruth bubble_train(const Vessel& vessel, double spacing_mm, double speed_mms, int frame_count,
                         double frame_rate, std::uint64_t seed, double intensity_sigma) {
  require(spacing_mm > 0.0 && frame_count > 0 && frame_rate > 0.0, "bubble_train: invalid arguments");
  GroundTruth gt;
  gt.frame_rate = frame_rate;
  gt.frame_count = frame_count;
  Rng rng = make_rng(seed, kStreamBubbleIntensity);
  std::uniform_real_distribution<double> u(0.0, spacing_mm);
  const double phase = u(rng);
  const double len = vessel.length_mm();
  const double travel = std::abs(speed_mms) * frame_count / frame_rate;
  const int i_lo = -static_cast<int>(std::ceil(travel / spacing_mm)) - 1;
  const int i_hi = static_cast<int>(std::ceil((len + travel) / spacing_mm)) + 1;
  int next_id = 0;
  for (int i = i_lo; i <= i_hi; ++i) {
    BubbleTrajectory b;
    b.intensity = lognormal_intensity(rng, intensity_sigma);
    for (int k = 0; k < frame_count; ++k) {
      const double s = phase + i * spacing_mm + speed_mms * k / frame_rate;
      if (s < 0.0 || s > len) continue;
      const Vec2 tan = vessel.tangent_at(s);
      b.points.push_back({k, vessel.point_at(s), speed_mms * tan});
    }
    if (!b.points.empty()) {
      b.id = next_id++;
      gt.bubbles.push_back(std::move(b));
    }
  }
  return gt;
}

void write_ground_truth_csv(std::ostream& os, const GroundTruth& truth) {
  os << "bubble_id,frame,x_mm,z_mm,vx_mms,vz_mms\n" << std::setprecision(10);
  for (const auto& b : truth.bubbles)
    for (const auto& p : b.points)
      os << b.id << ',' << p.frame << ',' << p.position.x << ',' << p.position.z << ',' << p.velocity.x << ','
         << p.velocity.z << '\n';
}

// ---------------------------------------------------------------- image-domain rendering

ImageSequence render_ceus(const GroundTruth& truth, const Psf& psf, const Grid& grid, const CeusRenderOptions& opt) {
  grid.validate();
  psf.validate();
  if (psf.image_rows != grid.rows || psf.image_cols != grid.cols)
    fail(ErrorCode::InvalidArgument, "render_ceus: PSF extent does not match the grid");
  std::vector<SplineImage<double>> splines;
  for (const auto& t : psf.templates) splines.emplace_back(t);
  const auto frames = truth.by_frame();

  ImageSequence seq;
  seq.grid = grid;
  seq.frame_rate = truth.frame_rate;
  seq.kind = SequenceKind::Ceus;
  seq.frames.resize(truth.frame_count);
  seq.frame_index.resize(truth.frame_count);

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < truth.frame_count; ++k) {
    ImageD img(grid.rows, grid.cols);
    for (const auto& [bi, pi] : frames[k]) {
      const auto& b = truth.bubbles[bi];
      Vec2 p = b.points[pi].position;
      if (opt.motion) p = truth.observed(p, k);
      const double r0 = grid.row_of(p.z), c0 = grid.col_of(p.x);
      const int region = psf.region_of(r0, c0);
      const ImageD& t = psf.at(region);
      const int hr = t.rows() / 2, hc = t.cols() / 2;
      for (int r = static_cast<int>(std::floor(r0)) - hr; r <= static_cast<int>(std::ceil(r0)) + hr; ++r)
        for (int c = static_cast<int>(std::floor(c0)) - hc; c <= static_cast<int>(std::ceil(c0)) + hc; ++c) {
          if (!img.contains(r, c)) continue;
          const double tr = hr + (r - r0), tc = hc + (c - c0);
          if (tr < 0.0 || tc < 0.0 || tr > t.rows() - 1 || tc > t.cols() - 1) continue;
          img(r, c) += b.intensity * splines[region].value(tr, tc);
        }
    }
    if (opt.noise_level > 0.0) {
      Rng rng = make_rng(opt.seed, kStreamFrameNoise, k);
      std::normal_distribution<double> n(0.0, opt.noise_level);
      for (auto& v : img) v += n(rng);
    }
    seq.frames[k] = std::move(img);
    seq.frame_index[k] = k;
  }
  return seq;
}

ImageSequence render_bmode(const GroundTruth& truth, const PhantomScene& scene, const Grid& grid,
                           const BmodeRenderOptions& opt) {
  grid.validate();
  require(opt.sigma_rows_px > 0.0 && opt.sigma_cols_px > 0.0 && opt.wavelength_mm > 0.0,
          "render_bmode: kernel parameters must be positive");
  const int hr = static_cast<int>(std::ceil(3.0 * opt.sigma_rows_px));
  const int hc = static_cast<int>(std::ceil(3.0 * opt.sigma_cols_px));
  std::vector<cdouble> amp(scene.tissue.size());
  {
    Rng rng = make_rng(opt.seed, kStreamTissue, 1);
    std::uniform_real_distribution<double> ph(0.0, 2.0 * kPi);
    for (std::size_t i = 0; i < amp.size(); ++i) amp[i] = std::polar(scene.tissue[i].reflectivity, ph(rng));
  }
  const double k_axial = 4.0 * kPi / opt.wavelength_mm;
  const auto frames = truth.by_frame();

  ImageSequence seq;
  seq.grid = grid;
  seq.frame_rate = truth.frame_rate;
  seq.kind = SequenceKind::BMode;
  seq.frames.resize(truth.frame_count);
  seq.frame_index.resize(truth.frame_count);

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < truth.frame_count; ++k) {
    ImageC field(grid.rows, grid.cols);
    for (std::size_t i = 0; i < amp.size(); ++i) {
      Vec2 p = scene.tissue[i].position;
      if (opt.motion) p = truth.observed(p, k);
      const double r0 = grid.row_of(p.z), c0 = grid.col_of(p.x);
      const int rc = static_cast<int>(std::lround(r0)), cc = static_cast<int>(std::lround(c0));
      for (int r = rc - hr; r <= rc + hr; ++r) {
        if (r < 0 || r >= grid.rows) continue;
        const double dr = r - r0;
        const cdouble rot = amp[i] * std::polar(std::exp(-0.5 * dr * dr / (opt.sigma_rows_px * opt.sigma_rows_px)),
                                                k_axial * dr * grid.dz_mm);
        for (int c = cc - hc; c <= cc + hc; ++c) {
          if (c < 0 || c >= grid.cols) continue;
          const double dc = c - c0;
          field(r, c) += rot * std::exp(-0.5 * dc * dc / (opt.sigma_cols_px * opt.sigma_cols_px));
        }
      }
    }
    ImageD img(grid.rows, grid.cols);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::abs(field[i]);
    for (const auto& [bi, pi] : frames[k]) {
      const auto& b = truth.bubbles[bi];
      Vec2 p = b.points[pi].position;
      if (opt.motion) p = truth.observed(p, k);
      const double r0 = grid.row_of(p.z), c0 = grid.col_of(p.x);
      const int rc = static_cast<int>(std::lround(r0)), cc = static_cast<int>(std::lround(c0));
      for (int r = rc - hr; r <= rc + hr; ++r)
        for (int c = cc - hc; c <= cc + hc; ++c) {
          if (!img.contains(r, c)) continue;
          const double dr = r - r0, dc = c - c0;
          img(r, c) += opt.bubble_gain * b.intensity *
                       std::exp(-0.5 * (dr * dr / (opt.sigma_rows_px * opt.sigma_rows_px) +
                                        dc * dc / (opt.sigma_cols_px * opt.sigma_cols_px)));
        }
    }
    if (opt.noise_level > 0.0) {
      Rng rng = make_rng(opt.seed, kStreamFrameNoise, k);
      std::normal_distribution<double> n(0.0, opt.noise_level);
      for (auto& v : img) v += n(rng);
    }
    seq.frames[k] = std::move(img);
    seq.frame_index[k] = k;
  }
  return seq;
}

// ---------------------------------------------------------------- channel data

double echo_delay_us(const ProbeGeometry& probe, double steering_deg, Vec2 p, int element) {
  const Vec2 s = probe.virtual_source(steering_deg);
  const Vec2 e{probe.element_x(element), 0.0};
  return ((p - s).norm() - probe.virtual_source_mm + (p - e).norm()) / probe.c_mm_per_us();
}

int channel_sample_count(const ProbeGeometry& probe, double depth_max_mm) {
  const double half = probe.sector_half_angle_deg() * kDeg;
  const double d = probe.virtual_source_mm;
  double max_steer = 0.0;
  for (double a : probe.steering_angles_deg) max_steer = std::max(max_steer, std::abs(a) * kDeg);
  const double tx = (depth_max_mm + d) / std::cos(half) + 2.0 * d * std::sin(0.5 * max_steer) - d;
  const double rx = std::hypot((depth_max_mm + d) * std::tan(half) + 0.5 * probe.aperture_mm(), depth_max_mm);
  const double t_us = (tx + rx) / probe.c_mm_per_us() + 5.0 * probe.pulse_sigma_us();
  return static_cast<int>(std::ceil(t_us * probe.sample_rate_mhz)) + 8;
}

namespace {

struct Scatterer {
  Vec2 p;
  double refl;
  double eps;
};

void check_in_sector(const ProbeGeometry& probe, Vec2 p, double depth_max_mm) {
  const double ang = std::atan2(std::abs(p.x), p.z + probe.virtual_source_mm) / kDeg;
  if (!(p.z > 0.0) || p.z > depth_max_mm || ang > probe.sector_half_angle_deg() + 1e-9)
    fail(ErrorCode::InvalidArgument, "synthesize_channels: scatterer outside the imaging sector");
}

}  // namespace

std::vector<ChannelTriplet> synthesize_channels(const GroundTruth& truth, const PhantomScene& scene,
                                                const ProbeGeometry& probe, const ChannelSynthesisOptions& opt) {
  probe.validate();
  require(opt.frame_count > 0 && opt.first_frame >= 0, "synthesize_channels: invalid frame range");
  require(opt.depth_max_mm > 0.0, "synthesize_channels: depth must be positive");
  const int n_el = probe.element_count;
  const int n_s = channel_sample_count(probe, opt.depth_max_mm);
  const int n_ang = static_cast<int>(probe.steering_angles_deg.size());
  const double sigma = probe.pulse_sigma_us();
  const double fs = probe.sample_rate_mhz, fc = probe.center_frequency_mhz;
  const int half_span = static_cast<int>(std::ceil(5.0 * sigma * fs));
  const auto frames = truth.by_frame();

  int odd = 0;
  for (int e = 0; e < n_el; e += 2) ++odd;
  const double incident[3] = {1.0, static_cast<double>(odd) / n_el, static_cast<double>(n_el - odd) / n_el};

  std::vector<ChannelTriplet> out;
  for (int f = opt.first_frame; f < opt.first_frame + opt.frame_count; ++f)
    for (int a = 0; a < n_ang; ++a) {
      ChannelTriplet trip;
      trip.frame = f;
      trip.angle_index = a;
      trip.angle_deg = probe.steering_angles_deg[a];
      for (int j = 0; j < 3; ++j) {
        const double t_frame = f / truth.frame_rate;
        const double t_p = t_frame + (a * 3 + j) / probe.prf_hz;
        std::vector<Scatterer> sc;
        if (opt.include_tissue)
          for (const auto& t : scene.tissue) {
            Vec2 p = t.position;
            if (opt.motion) p += truth.motion.displacement(p, t_p);
            sc.push_back({p, t.reflectivity, t.nonlinearity});
          }
        if (opt.include_bubbles && f < truth.frame_count)
          for (const auto& [bi, pi] : frames[f]) {
            const auto& pt = truth.bubbles[bi].points[pi];
            Vec2 p = pt.position + (t_p - t_frame) * pt.velocity;
            if (opt.motion) p += truth.motion.displacement(p, t_p);
            sc.push_back({p, scene.bubble_reflectivity * truth.bubbles[bi].intensity, scene.bubble_nonlinearity});
          }
        for (const auto& s : sc) check_in_sector(probe, s.p, opt.depth_max_mm);

        ImageD rf(n_el, n_s);
        const double inc = incident[j];
        const Vec2 src = probe.virtual_source(trip.angle_deg);
#pragma omp parallel for schedule(static)
        for (int e = 0; e < n_el; ++e) {
          const Vec2 ep{probe.element_x(e), 0.0};
          double* row = &rf(e, 0);
          for (const auto& s : sc) {
            const double resp = s.refl * (inc + s.eps * inc * inc);
            const double tau = ((s.p - src).norm() - probe.virtual_source_mm + (s.p - ep).norm()) / probe.c_mm_per_us();
            const int centre = static_cast<int>(std::lround(tau * fs));
            for (int i = std::max(0, centre - half_span); i <= std::min(n_s - 1, centre + half_span); ++i) {
              const double dt = i / fs - tau;
              row[i] += resp * std::exp(-0.5 * dt * dt / (sigma * sigma)) * std::cos(2.0 * kPi * fc * dt);
            }
          }
        }
        if (opt.noise_std > 0.0) {
          Rng rng = make_rng(opt.seed, kStreamChannelNoise, (static_cast<std::uint64_t>(f) * n_ang + a) * 3 + j);
          std::normal_distribution<double> n(0.0, opt.noise_std);
          for (auto& v : rf) v += n(rng);
        }
        trip.pulses[j] = std::move(rf);
      }
      out.push_back(std::move(trip));
    }
  return out;
}

}  // namespace ulm
