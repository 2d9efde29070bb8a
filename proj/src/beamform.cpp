#include "ulm/beamform.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ulm/fft.hpp"
#include "ulm/filter.hpp"
#include "ulm/interp.hpp"

namespace ulm {

Vec2 PolarGrid::position(double ir, double ib) const {
  const double rr = r(ir), ph = phi(ib);
  return {rr * std::sin(ph), rr * std::cos(ph) - source_mm};
}

Vec2 PolarGrid::radial_unit(double ib) const {
  const double ph = phi(ib);
  return {std::sin(ph), std::cos(ph)};
}

bool PolarGrid::index_of(Vec2 p, double& ir, double& ib) const {
  const double rr = std::hypot(p.x, p.z + source_mm);
  const double ph = std::atan2(p.x, p.z + source_mm);
  ir = (rr - r0_mm) / dr_mm;
  ib = (ph - phi0_rad) / dphi_rad;
  const double tol = 1e-9;
  return ir >= -tol && ib >= -tol && ir <= samples - 1 + tol && ib <= beams - 1 + tol;
}

void PolarGrid::validate() const {
  require(samples > 1 && beams > 1, "PolarGrid: need at least 2x2 samples");
  require(dr_mm > 0.0 && dphi_rad > 0.0, "PolarGrid: steps must be positive");
  require(r0_mm > 0.0 && source_mm >= 0.0, "PolarGrid: invalid origin");
}

PolarGrid PolarGrid::for_probe(const ProbeGeometry& probe, double depth_min_mm, double depth_max_mm, int beams) {
  probe.validate();
  require(depth_max_mm > depth_min_mm && depth_min_mm >= 0.0, "PolarGrid: invalid depth range");
  require(beams > 1, "PolarGrid: need at least two beams");
  PolarGrid g;
  g.source_mm = probe.virtual_source_mm;
  g.dr_mm = probe.c_mm_per_us() / (2.0 * probe.sample_rate_mhz);
  g.r0_mm = depth_min_mm + g.source_mm;
  const double half = probe.sector_half_angle_deg() * kPi / 180.0;
  // Cover the full depth at the sector edge.
  const double r_max = (depth_max_mm + g.source_mm) / std::cos(half);
  g.samples = static_cast<int>(std::ceil((r_max - g.r0_mm) / g.dr_mm)) + 1;
  g.beams = beams;
  g.phi0_rad = -half;
  g.dphi_rad = 2.0 * half / (beams - 1);
  return g;
}

ImageD am_combine(const ChannelTriplet& t) {
  const ImageD& full = t.pulse(PulseTag::Full);
  const ImageD& h1 = t.pulse(PulseTag::HalfOdd);
  const ImageD& h2 = t.pulse(PulseTag::HalfEven);
  require(full.same_shape(h1) && full.same_shape(h2), "am_combine: pulse shapes differ");
  ImageD out(full.rows(), full.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = full[i] - h1[i] - h2[i];
  return out;
}

ImageC analytic_signal(const ImageD& rf) {
  const int n = rf.cols();
  ImageC out(rf.rows(), n);
  std::vector<cdouble> row(n);
  for (int e = 0; e < rf.rows(); ++e) {
    for (int i = 0; i < n; ++i) row[i] = rf(e, i);
    auto spec = fft::forward(row);
    for (int k = 1; k < n; ++k) {
      if (2 * k < n)
        spec[k] *= 2.0;
      else if (2 * k > n)
        spec[k] = 0.0;
    }
    const auto a = fft::inverse(spec);
    for (int i = 0; i < n; ++i) out(e, i) = a[i];
  }
  return out;
}

Apodization apodization_from(const std::string& s) {
  if (s == "none" || s == "rect") return Apodization::None;
  if (s == "hann") return Apodization::Hann;
  fail(ErrorCode::ConfigInvalid, "unknown apodization '" + s + "'");
}

double apodization_weight(Apodization a, int element, int count) {
  if (a == Apodization::None) return 1.0;
  return 0.5 - 0.5 * std::cos(2.0 * kPi * (element + 1.0) / (count + 1.0));
}

AngleImage das(const ImageC& analytic, const ProbeGeometry& probe, double angle_deg, const PolarGrid& grid,
               const ImageD* radial_shift_mm, Exec exec, Apodization apod) {
  probe.validate();
  grid.validate();
  require(analytic.rows() == probe.element_count, "das: channel count does not match the probe");
  if (radial_shift_mm)
    require(radial_shift_mm->rows() == grid.samples && radial_shift_mm->cols() == grid.beams,
            "das: shift map shape does not match the grid");
  const int n_s = analytic.cols();
  const double fs = probe.sample_rate_mhz, fc = probe.center_frequency_mhz, c = probe.c_mm_per_us();
  const double w0 = 2.0 * kPi * fc;

  // Baseband copy so linear interpolation only sees the slowly varying envelope.
  ImageC bb(analytic.rows(), n_s);
  for (int e = 0; e < analytic.rows(); ++e)
    for (int i = 0; i < n_s; ++i) bb(e, i) = analytic(e, i) * std::polar(1.0, -w0 * i / fs);

  const Vec2 src = probe.virtual_source(angle_deg);
  std::vector<double> ex(probe.element_count);
  std::vector<double> wt(probe.element_count);
  for (int e = 0; e < probe.element_count; ++e) {
    ex[e] = probe.element_x(e);
    wt[e] = apodization_weight(apod, e, probe.element_count);
  }

  AngleImage out{ImageC(grid.samples, grid.beams), ImageD(grid.samples, grid.beams), ImageD(grid.samples, grid.beams)};
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel)
  for (int ib = 0; ib < grid.beams; ++ib) {
    const Vec2 u = grid.radial_unit(ib);
    for (int ir = 0; ir < grid.samples; ++ir) {
      Vec2 p = grid.position(ir, ib);
      if (radial_shift_mm) p += (*radial_shift_mm)(ir, ib) * u;
      const double tx = (p - src).norm() - probe.virtual_source_mm;
      cdouble sum = 0.0;
      double power = 0.0;
      int count = 0;
      for (int e = 0; e < probe.element_count; ++e) {
        const double t = (tx + std::hypot(p.x - ex[e], p.z)) / c;
        const double x = t * fs;
        const int i0 = static_cast<int>(std::floor(x));
        if (i0 < 0 || i0 + 1 >= n_s) continue;
        const double f = x - i0;
        const cdouble v = wt[e] * ((1.0 - f) * bb(e, i0) + f * bb(e, i0 + 1)) * std::polar(1.0, w0 * t);
        sum += v;
        power += std::norm(v);
        ++count;
      }
      out.sum(ir, ib) = sum;
      out.power(ir, ib) = power;
      out.count(ir, ib) = count;
    }
  }
  return out;
}

ImageC cv_weight(const AngleImage& a, double eps_var) {
  require(a.sum.rows() == a.power.rows() && a.sum.cols() == a.power.cols(), "cv_weight: shape mismatch");
  if (eps_var < 0.0) {
    double mean_power = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < a.power.size(); ++i)
      if (a.count[i] > 0) {
        mean_power += a.power[i] / a.count[i];
        ++used;
      }
    eps_var = used ? 1e-3 * mean_power / used : 0.0;
  }
  ImageC out(a.sum.rows(), a.sum.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double n = a.count[i];
    if (n <= 0.0) continue;
    const double var = std::max(0.0, a.power[i] / n - std::norm(a.sum[i] / n));
    const double den = n * var + eps_var;
    const double w = den > 0.0 ? std::clamp(std::norm(a.sum[i]) / den, 0.0, n) : n;
    out[i] = w * a.sum[i];
  }
  return out;
}

ImageD inter_angle_shift(const std::vector<ImageC>& imgs, double wavelength_mm, double sigma_px) {
  require(imgs.size() >= 2, "inter_angle_shift: need at least two angles");
  std::vector<std::pair<int, int>> pairs;
  if (imgs.size() == 6)
    pairs = {{0, 1}, {1, 2}, {3, 4}, {4, 5}};
  else
    for (std::size_t k = 0; k + 1 < imgs.size(); ++k) pairs.push_back({int(k), int(k + 1)});
  const int rows = imgs[0].rows(), cols = imgs[0].cols();
  ImageD re(rows, cols), im(rows, cols);
  for (auto [a, b] : pairs) {
    require(imgs[a].same_shape(imgs[0]) && imgs[b].same_shape(imgs[0]), "inter_angle_shift: shape mismatch");
    for (std::size_t i = 0; i < re.size(); ++i) {
      const cdouble r = std::conj(imgs[a][i]) * imgs[b][i];
      re[i] += r.real();
      im[i] += r.imag();
    }
  }
  if (sigma_px > 0.0) {
    re = gaussian_blur(re, sigma_px);
    im = gaussian_blur(im, sigma_px);
  }
  ImageD shift(rows, cols);
  for (std::size_t i = 0; i < shift.size(); ++i)
    shift[i] = -std::atan2(im[i], re[i]) * wavelength_mm / (4.0 * kPi);
  return shift;
}

AngleImage shift_radially(const AngleImage& a, const ImageD& shift_mm, double step, double dr_mm) {
  const int rows = a.sum.rows(), cols = a.sum.cols();
  require(shift_mm.rows() == rows && shift_mm.cols() == cols, "shift_radially: shift map shape mismatch");
  require(dr_mm > 0.0, "shift_radially: radial step must be positive");
  AngleImage out{ImageC(rows, cols), ImageD(rows, cols), a.count};
#pragma omp parallel for schedule(static)
  for (int ib = 0; ib < cols; ++ib) {
    std::vector<cdouble> s(rows), p(rows);
    for (int ir = 0; ir < rows; ++ir) {
      s[ir] = a.sum(ir, ib);
      p[ir] = a.power(ir, ib);
    }
    for (int ir = 0; ir < rows; ++ir) {
      const double x = ir + step * shift_mm(ir, ib) / dr_mm;
      out.sum(ir, ib) = lanczos4(s, x);
      out.power(ir, ib) = std::max(0.0, lanczos4(p, x).real());
    }
  }
  return out;
}

ImageC compound(const std::vector<AngleImage>& angles, const ImageD* shift_mm, double dr_mm, Weighting w,
               double cv_eps) {
  require(!angles.empty(), "compound: no angle images");
  const int rows = angles[0].sum.rows(), cols = angles[0].sum.cols();
  AngleImage acc{ImageC(rows, cols), ImageD(rows, cols), ImageD(rows, cols)};
  const double mid = 0.5 * (static_cast<double>(angles.size()) - 1.0);
  for (std::size_t k = 0; k < angles.size(); ++k) {
    require(angles[k].sum.same_shape(acc.sum), "compound: shape mismatch");
    const AngleImage a = shift_mm ? shift_radially(angles[k], *shift_mm, k - mid, dr_mm) : angles[k];
    for (std::size_t i = 0; i < acc.sum.size(); ++i) {
      acc.sum[i] += a.sum[i];
      acc.power[i] += a.power[i];
      acc.count[i] += a.count[i];
    }
  }
  return w == Weighting::CoherenceVariance ? cv_weight(acc, cv_eps) : acc.sum;
}

ImageC beamform_frame(const std::vector<ImageD>& rf, const std::vector<double>& angles_deg, const ProbeGeometry& probe,
                      const PolarGrid& grid, const BeamformOptions& opt) {
  require(!rf.empty() && rf.size() == angles_deg.size(), "beamform_frame: angle count mismatch");
  const int k_count = static_cast<int>(rf.size());
  std::vector<ImageC> analytic;
  std::vector<AngleImage> first;
  for (int k = 0; k < k_count; ++k) {
    analytic.push_back(analytic_signal(rf[k]));
    first.push_back(das(analytic.back(), probe, angles_deg[k], grid, nullptr, opt.exec, opt.apodization));
  }
  if (!opt.motion_correction || k_count < 2) return compound(first, nullptr, grid.dr_mm, opt.weighting, opt.cv_eps);

  std::vector<ImageC> sums;
  for (const auto& a : first) sums.push_back(a.sum);
  const ImageD shift = inter_angle_shift(sums, probe.wavelength_mm(), opt.doppler_sigma_px);
  if (opt.route == CompoundRoute::Stack) return compound(first, &shift, grid.dr_mm, opt.weighting, opt.cv_eps);

  // Streaming route: the shift goes straight into the focusing delays.
  std::vector<AngleImage> shifted;
  const double mid = 0.5 * (k_count - 1);
  for (int k = 0; k < k_count; ++k) {
    ImageD s(grid.samples, grid.beams);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = (k - mid) * shift[i];
    shifted.push_back(das(analytic[k], probe, angles_deg[k], grid, &s, opt.exec, opt.apodization));
  }
  return compound(shifted, nullptr, grid.dr_mm, opt.weighting, opt.cv_eps);
}

ImageC beamform_frame(const std::vector<const ChannelTriplet*>& triplets, const ProbeGeometry& probe,
                      const PolarGrid& grid, const BeamformOptions& opt) {
  std::vector<ImageD> rf;
  std::vector<double> angles;
  for (const auto* t : triplets) {
    rf.push_back(opt.am ? am_combine(*t) : t->pulse(PulseTag::Full));
    angles.push_back(t->angle_deg);
  }
  return beamform_frame(rf, angles, probe, grid, opt);
}

ImageD to_cartesian(const ImageD& env, const PolarGrid& polar, const Grid& grid, bool allow_outside) {
  polar.validate();
  grid.validate();
  require(env.rows() == polar.samples && env.cols() == polar.beams, "to_cartesian: envelope does not match grid");
  const SplineImage<double> sp(env);
  ImageD out(grid.rows, grid.cols);
  bool outside = false;
#pragma omp parallel for schedule(static) reduction(|| : outside)
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      double ir, ib;
      if (!polar.index_of(grid.position(r, c), ir, ib)) {
        outside = true;
        continue;
      }
      ir = std::clamp(ir, 0.0, polar.samples - 1.0);
      ib = std::clamp(ib, 0.0, polar.beams - 1.0);
      out(r, c) = sp.value(ir, ib);
    }
  if (outside && !allow_outside)
    fail(ErrorCode::InvalidArgument, "to_cartesian: raster extends outside the polar footprint");
  return out;
}

ImageSequence beamform_sequence(const std::vector<ChannelTriplet>& data, const ProbeGeometry& probe,
                                const PolarGrid& polar, const Grid& grid, double frame_rate,
                                const BeamformSequenceOptions& opt) {
  std::map<int, std::vector<const ChannelTriplet*>> by_frame;
  for (const auto& t : data) by_frame[t.frame].push_back(&t);
  require(!by_frame.empty(), "beamform_sequence: no channel data");
  const int n_ang = static_cast<int>(probe.steering_angles_deg.size());

  // rf[frame][angle]
  std::vector<std::vector<ImageD>> rf;
  std::vector<std::vector<double>> angles;
  ImageSequence seq;
  seq.grid = grid;
  seq.frame_rate = frame_rate;
  seq.kind = SequenceKind::Ceus;
  for (auto& [f, ts] : by_frame) {
    require(static_cast<int>(ts.size()) == n_ang, "beamform_sequence: frame is missing steering angles");
    std::sort(ts.begin(), ts.end(), [](auto* a, auto* b) { return a->angle_index < b->angle_index; });
    std::vector<ImageD> per_angle;
    std::vector<double> ang;
    for (const auto* t : ts) {
      per_angle.push_back(opt.frame.am ? am_combine(*t) : t->pulse(PulseTag::Full));
      ang.push_back(t->angle_deg);
    }
    rf.push_back(std::move(per_angle));
    angles.push_back(std::move(ang));
    seq.frame_index.push_back(f);
  }
  if (opt.clutter_filter && rf.size() >= 2)
    for (int a = 0; a < n_ang; ++a) {
      std::vector<ImageD> series;
      for (const auto& fr : rf) series.push_back(fr[a]);
      series = moving_average_subtract(series);
      for (std::size_t k = 0; k < rf.size(); ++k) rf[k][a] = std::move(series[k]);
    }
  for (std::size_t k = 0; k < rf.size(); ++k) {
    const ImageC cf = beamform_frame(rf[k], angles[k], probe, polar, opt.frame);
    ImageD env(cf.rows(), cf.cols());
    for (std::size_t i = 0; i < env.size(); ++i) env[i] = std::abs(cf[i]);
    seq.frames.push_back(to_cartesian(env, polar, grid, opt.allow_outside));
  }
  return seq;
}

}  // namespace ulm
