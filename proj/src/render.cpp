#include "ulm/render.hpp"

#include <png.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>

#include "ulm/filter.hpp"

namespace ulm {

void RenderOptions::validate() const {
  grid.validate();
  if (!(wavelength_um > 0.0)) fail(ErrorCode::ConfigInvalid, "render: wavelength must be positive");
  if (grid.dx_mm * 1e3 > 13.5 + 1e-9 || grid.dz_mm * 1e3 > 13.5 + 1e-9)
    fail(ErrorCode::ConfigInvalid, "render: raster pitch must be 13.5 um or finer");
  if (std::abs(grid.dx_mm - grid.dz_mm) > 1e-12) fail(ErrorCode::ConfigInvalid, "render: raster pixels must be square");
}

Grid sr_grid(double x0_mm, double x1_mm, double z0_mm, double z1_mm, double pitch_um) {
  require(x1_mm > x0_mm && z1_mm > z0_mm && pitch_um > 0.0, "sr_grid: invalid extent");
  Grid g;
  g.dx_mm = g.dz_mm = pitch_um * 1e-3;
  g.x0_mm = x0_mm;
  g.z0_mm = z0_mm;
  g.cols = static_cast<int>(std::floor((x1_mm - x0_mm) / g.dx_mm + 1e-9)) + 1;
  g.rows = static_cast<int>(std::floor((z1_mm - z0_mm) / g.dz_mm + 1e-9)) + 1;
  return g;
}

namespace {

LinkRaster empty_raster(const Grid& g) {
  return {ImageD(g.rows, g.cols), ImageD(g.rows, g.cols), ImageD(g.rows, g.cols), ImageD(g.rows, g.cols)};
}

void deposit(LinkRaster& acc, int r, int c, double w, double speed, double vx, double vz) {
  if (w <= 0.0 || !acc.weight.contains(r, c)) return;
  acc.weight(r, c) += w;
  acc.speed_sum(r, c) += w * speed;
  acc.vx_sum(r, c) += w * vx;
  acc.vz_sum(r, c) += w * vz;
}

void add_into(LinkRaster& dst, const LinkRaster& src) {
  for (std::size_t i = 0; i < dst.weight.size(); ++i) {
    dst.weight[i] += src.weight[i];
    dst.speed_sum[i] += src.speed_sum[i];
    dst.vx_sum[i] += src.vx_sum[i];
    dst.vz_sum[i] += src.vz_sum[i];
  }
}

double sigma_px(double fwhm_um, const Grid& g) { return fwhm_to_sigma(fwhm_um * 1e-3 / g.dx_mm); }

}  // namespace

void rasterize_link(LinkRaster& acc, const Grid& grid, const TrackPoint& a, const TrackPoint& b) {
  const double r0 = grid.row_of(a.z_mm), c0 = grid.col_of(a.x_mm);
  const double r1 = grid.row_of(b.z_mm), c1 = grid.col_of(b.x_mm);
  const double speed = std::hypot(b.vx_mms, b.vz_mms);
  const bool along_cols = std::abs(c1 - c0) >= std::abs(r1 - r0);
  const double m0 = along_cols ? c0 : r0, m1 = along_cols ? c1 : r1;
  const double n0 = along_cols ? r0 : c0, n1 = along_cols ? r1 : c1;
  if (m0 == m1) return;
  const double dir = m1 > m0 ? 1.0 : -1.0;
  // integers i with m0 <= i < m1 (or m1 < i <= m0 going backwards)
  const long first = dir > 0 ? static_cast<long>(std::ceil(m0)) : static_cast<long>(std::floor(m0));
  for (long i = first; dir > 0 ? i < m1 : i > m1; i += static_cast<long>(dir)) {
    const double t = (i - m0) / (m1 - m0);
    const double n = n0 + t * (n1 - n0);
    const double fl = std::floor(n);
    const double frac = n - fl;
    const int lo = static_cast<int>(fl), major = static_cast<int>(i);
    if (along_cols) {
      deposit(acc, lo, major, 1.0 - frac, speed, b.vx_mms, b.vz_mms);
      deposit(acc, lo + 1, major, frac, speed, b.vx_mms, b.vz_mms);
    } else {
      deposit(acc, major, lo, 1.0 - frac, speed, b.vx_mms, b.vz_mms);
      deposit(acc, major, lo + 1, frac, speed, b.vx_mms, b.vz_mms);
    }
  }
}

LinkRaster rasterize_tracks(const std::vector<Track>& tracks, const Grid& grid, int min_len) {
  grid.validate();
  std::vector<const Track*> use;
  for (const auto& t : tracks)
    if (static_cast<int>(t.size()) >= min_len) use.push_back(&t);
  const int nthreads = std::max(1, omp_get_max_threads());
  std::vector<LinkRaster> part(nthreads);
#pragma omp parallel num_threads(nthreads)
  {
    const int tid = omp_get_thread_num();
    part[tid] = empty_raster(grid);
#pragma omp for schedule(static)
    for (int k = 0; k < static_cast<int>(use.size()); ++k) {
      const auto& p = use[k]->points;
      for (std::size_t i = 1; i < p.size(); ++i) rasterize_link(part[tid], grid, p[i - 1], p[i]);
    }
  }
  LinkRaster out = std::move(part[0]);
  for (int t = 1; t < nthreads; ++t)
    if (!part[t].weight.empty()) add_into(out, part[t]);
  return out;
}

ImageD density_map(const std::vector<Track>& tracks, const RenderOptions& opt) {
  opt.validate();
  const LinkRaster acc = rasterize_tracks(tracks, opt.grid, opt.min_track_len);
  return gaussian_blur(acc.weight, sigma_px(opt.fwhm_um(), opt.grid), opt.exec);
}

SrMaps render_maps(const std::vector<Track>& tracks, const RenderOptions& opt) {
  opt.validate();
  SrMaps m;
  m.grid = opt.grid;
  m.wavelength_um = opt.wavelength_um;
  const LinkRaster acc = rasterize_tracks(tracks, opt.grid, opt.min_track_len);
  m.density_raw = acc.weight;
  m.density = gaussian_blur(acc.weight, sigma_px(opt.fwhm_um(), opt.grid), opt.exec);

  const double d = opt.fwhm_px();
  const ImageD w = disk_filter(acc.weight, d, opt.exec);
  const ImageD s = disk_filter(acc.speed_sum, d, opt.exec);
  const ImageD vx = disk_filter(acc.vx_sum, d, opt.exec);
  const ImageD vz = disk_filter(acc.vz_sum, d, opt.exec);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.speed = ImageD(w.rows(), w.cols(), nan);
  m.direction = ImageD(w.rows(), w.cols(), nan);
  const double wmax = w.empty() ? 0.0 : *std::max_element(w.begin(), w.end());
  const double floor_w = 1e-12 * wmax;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i] > floor_w)) continue;
    const double sp = s[i] / w[i];
    m.speed[i] = sp;
    const double mx = vx[i] / w[i], mz = vz[i] / w[i];
    if (std::hypot(mx, mz) >= 1e-3 * sp && std::hypot(mx, mz) > 0.0) m.direction[i] = std::atan2(-mz, mx);
  }
  return m;
}

ImageD speed_map(const std::vector<Track>& tracks, const RenderOptions& opt) { return render_maps(tracks, opt).speed; }

ImageD direction_map(const std::vector<Track>& tracks, const RenderOptions& opt) {
  return render_maps(tracks, opt).direction;
}

std::vector<AnimationFrame> animate(const std::vector<Track>& tracks, const Grid& grid, const AnimationOptions& opt) {
  grid.validate();
  require(opt.acquisition_rate > 0.0 && opt.output_rate > 0.0, "animate: rates must be positive");
  std::vector<const Track*> use;
  double t0 = INFINITY, t1 = -INFINITY;
  for (const auto& t : tracks) {
    if (static_cast<int>(t.size()) < opt.min_track_len) continue;
    use.push_back(&t);
    t0 = std::min(t0, t.points.front().frame / opt.acquisition_rate);
    t1 = std::max(t1, t.points.back().frame / opt.acquisition_rate);
  }
  std::vector<AnimationFrame> out;
  if (use.empty()) return out;
  int n = static_cast<int>(std::floor((t1 - t0) * opt.output_rate + 1e-9)) + 1;
  if (opt.max_frames > 0) n = std::min(n, opt.max_frames);
  out.resize(n);
  const double sigma = sigma_px(opt.blob_fwhm_um, grid);
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n; ++k) {
    AnimationFrame& fr = out[k];
    fr.time_s = t0 + k / opt.output_rate;
    fr.warm = ImageD(grid.rows, grid.cols);
    fr.cold = ImageD(grid.rows, grid.cols);
    for (const Track* tr : use) {
      const auto& p = tr->points;
      const double ta = p.front().frame / opt.acquisition_rate, tb = p.back().frame / opt.acquisition_rate;
      if (fr.time_s < ta - 1e-12 || fr.time_s > tb + 1e-12) continue;
      std::size_t i = 1;
      while (i + 1 < p.size() && p[i].frame / opt.acquisition_rate < fr.time_s) ++i;
      double x = p[0].x_mm, z = p[0].z_mm, vz = p[0].vz_mms;
      if (p.size() > 1) {
        const double sa = p[i - 1].frame / opt.acquisition_rate, sb = p[i].frame / opt.acquisition_rate;
        const double u = sb > sa ? std::clamp((fr.time_s - sa) / (sb - sa), 0.0, 1.0) : 0.0;
        x = p[i - 1].x_mm + u * (p[i].x_mm - p[i - 1].x_mm);
        z = p[i - 1].z_mm + u * (p[i].z_mm - p[i - 1].z_mm);
        vz = p[i].vz_mms;
      }
      const double warm = vz < 0.0 ? 1.0 : (vz > 0.0 ? 0.0 : 0.5);
      const double r = grid.row_of(z), c = grid.col_of(x);
      const int r0 = static_cast<int>(std::floor(r)), c0 = static_cast<int>(std::floor(c));
      const double fr_r = r - r0, fr_c = c - c0;
      for (int dr = 0; dr <= 1; ++dr)
        for (int dc = 0; dc <= 1; ++dc) {
          if (!fr.warm.contains(r0 + dr, c0 + dc)) continue;
          const double w = (dr ? fr_r : 1.0 - fr_r) * (dc ? fr_c : 1.0 - fr_c);
          fr.warm(r0 + dr, c0 + dc) += w * warm;
          fr.cold(r0 + dr, c0 + dc) += w * (1.0 - warm);
        }
    }
    fr.warm = gaussian_blur(fr.warm, sigma);
    fr.cold = gaussian_blur(fr.cold, sigma);
  }
  return out;
}

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  auto u8 = [](double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
  return {u8(r), u8(g), u8(b)};
}

Image<Rgb> hsv_composite(const ImageD& hue_source, double lo, double hi, const ImageD& density) {
  require(hue_source.rows() == density.rows() && hue_source.cols() == density.cols(), "hsv_composite: shape mismatch");
  std::vector<double> pos;
  for (double v : density)
    if (v > 0.0) pos.push_back(v);
  double top = 1.0;
  if (!pos.empty()) {
    const std::size_t k = std::min(pos.size() - 1, static_cast<std::size_t>(0.995 * pos.size()));
    std::nth_element(pos.begin(), pos.begin() + k, pos.end());
    top = pos[k] > 0.0 ? pos[k] : 1.0;
  }
  Image<Rgb> out(density.rows(), density.cols(), Rgb{0, 0, 0});
  for (std::size_t i = 0; i < density.size(); ++i) {
    const double h = hue_source[i];
    if (!std::isfinite(h) || !(density[i] > 0.0)) continue;
    const double t = hi > lo ? std::clamp((h - lo) / (hi - lo), 0.0, 1.0) : 0.0;
    out[i] = hsv_to_rgb(0.7 * (1.0 - t), 1.0, std::clamp(density[i] / top, 0.0, 1.0));
  }
  return out;
}

Image<Rgb> animation_rgb(const AnimationFrame& f, double scale) {
  Image<Rgb> out(f.warm.rows(), f.warm.cols(), Rgb{0, 0, 0});
  const double s = scale > 0.0 ? 1.0 / scale : 1.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double w = std::clamp(f.warm[i] * s, 0.0, 1.0), c = std::clamp(f.cold[i] * s, 0.0, 1.0);
    auto u8 = [](double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
    out[i] = {u8(w), u8(0.55 * w + 0.5 * c), u8(c)};
  }
  return out;
}

void write_pgm16(const std::string& path, const ImageD& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::MissingInput, "cannot write " + path);
  double top = 0.0;
  for (double v : img)
    if (std::isfinite(v)) top = std::max(top, v);
  os << "P5\n" << img.cols() << ' ' << img.rows() << "\n65535\n";
  for (double v : img) {
    const double t = std::isfinite(v) && top > 0.0 ? std::clamp(v / top, 0.0, 1.0) : 0.0;
    const auto u = static_cast<std::uint16_t>(std::lround(t * 65535.0));
    const char be[2] = {static_cast<char>(u >> 8), static_cast<char>(u & 0xff)};
    os.write(be, 2);
  }
  if (!os) fail(ErrorCode::MissingInput, "failed writing " + path);
}

void write_png(const std::string& path, const Image<Rgb>& img) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) fail(ErrorCode::MissingInput, "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Numerical, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Numerical, "libpng write failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.cols(), img.rows(), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(img.cols()) * 3);
  for (int r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < img.cols(); ++c)
      for (int k = 0; k < 3; ++k) row[3 * c + k] = img(r, c)[k];
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace ulm
