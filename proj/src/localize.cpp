#include "ulm/localize.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "ulm/filter.hpp"
#include "ulm/kernels.hpp"

namespace ulm {

namespace {

using Component = std::vector<std::pair<int, int>>;

std::vector<Component> components8(const Mask& mask) {
  std::vector<Component> out;
  Image<int> seen(mask.rows(), mask.cols(), 0);
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < mask.rows(); ++r)
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask(r, c) || seen(r, c)) continue;
      Component comp;
      stack.push_back({r, c});
      seen(r, c) = 1;
      while (!stack.empty()) {
        const auto [pr, pc] = stack.back();
        stack.pop_back();
        comp.push_back({pr, pc});
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = pr + dr, nc = pc + dc;
            if (mask.contains(nr, nc) && mask(nr, nc) && !seen(nr, nc)) {
              seen(nr, nc) = 1;
              stack.push_back({nr, nc});
            }
          }
      }
      std::sort(comp.begin(), comp.end());
      out.push_back(std::move(comp));
    }
  return out;
}

int region_index(double row, double col, int rows, int cols, int regions) {
  const int bz = std::clamp(static_cast<int>(std::floor(row * regions / rows)), 0, regions - 1);
  const int bx = std::clamp(static_cast<int>(std::floor(col * regions / cols)), 0, regions - 1);
  return bz * regions + bx;
}

// Masked patch values on a canvas padded by the template half sizes.
struct Canvas {
  ImageD img;
  Mask inside;
  int r0 = 0, c0 = 0;  // frame coordinates of canvas (0, 0)
};

Canvas patch_canvas(const Patch& p, const ImageD& frame, int hr, int hc) {
  Canvas cv;
  cv.r0 = p.row_min - hr;
  cv.c0 = p.col_min - hc;
  cv.img = ImageD(p.height() + 2 * hr, p.width() + 2 * hc);
  cv.inside = Mask(cv.img.rows(), cv.img.cols(), 0);
  for (const auto& [r, c] : p.pixels) {
    cv.img(r - cv.r0, c - cv.c0) = frame(r, c);
    cv.inside(r - cv.r0, c - cv.c0) = 1;
  }
  return cv;
}

std::vector<Component> ncc_islands(const Canvas& cv, const ImageD& templ, double threshold) {
  const ImageD ncc = kernels::parallel::ncc_map(cv.img, templ);
  Mask sup(ncc.rows(), ncc.cols(), 0);
  for (int r = 0; r < ncc.rows(); ++r)
    for (int c = 0; c < ncc.cols(); ++c) sup(r, c) = cv.inside(r, c) && ncc(r, c) > threshold;
  return components8(sup);
}

struct Candidate {
  Patch patch;
  int peak_r = 0, peak_c = 0;
  int fwhm_r = 0, fwhm_c = 0;
};

// Full width at half maximum through the peak, in whole pixels.
void half_max_widths(const Patch& p, const ImageD& frame, Candidate& cand) {
  double peak = -INFINITY;
  for (const auto& [r, c] : p.pixels)
    if (frame(r, c) > peak) {
      peak = frame(r, c);
      cand.peak_r = r;
      cand.peak_c = c;
    }
  const double half = 0.5 * peak;
  auto run = [&](int dr, int dc) {
    int n = 0;
    for (int r = cand.peak_r + dr, c = cand.peak_c + dc; frame.contains(r, c) && frame(r, c) >= half; r += dr, c += dc)
      ++n;
    return n;
  };
  cand.fwhm_r = 1 + run(1, 0) + run(-1, 0);
  cand.fwhm_c = 1 + run(0, 1) + run(0, -1);
}

double median_int(std::vector<int> v) {
  std::vector<double> d(v.begin(), v.end());
  return median(std::move(d));
}

}  // namespace

Mask adaptive_threshold(const ImageD& frame, double sensitivity, double noise_mads) {
  Mask mask(frame.rows(), frame.cols(), 0);
  if (frame.empty()) return mask;
  const double sigma = std::max(2.0, std::min(frame.rows(), frame.cols()) / 32.0);
  const ImageD local = gaussian_blur(frame, sigma);
  const double med = median(frame.values());
  const double floor = med + noise_mads * mad(frame.values(), med);
  for (std::size_t i = 0; i < frame.size(); ++i)
    mask[i] = frame[i] > floor && frame[i] > 0.0 && frame[i] >= sensitivity * local[i];
  return mask;
}

std::vector<Patch> segment_patches(const Mask& mask, const ImageD& frame, int frame_index, int regions) {
  require(mask.rows() == frame.rows() && mask.cols() == frame.cols(), "segment_patches: mask/frame shape mismatch");
  require(regions > 0, "segment_patches: region count must be positive");
  std::vector<Patch> out;
  for (auto& comp : components8(mask)) {
    Patch p;
    p.frame = frame_index;
    p.row_min = p.col_min = INT32_MAX;
    p.row_max = p.col_max = -1;
    double w = 0.0, wr = 0.0, wc = 0.0;
    for (const auto& [r, c] : comp) {
      p.row_min = std::min(p.row_min, r);
      p.row_max = std::max(p.row_max, r);
      p.col_min = std::min(p.col_min, c);
      p.col_max = std::max(p.col_max, c);
      const double v = std::max(0.0, frame(r, c));
      w += v;
      wr += v * r;
      wc += v * c;
    }
    if (w > 0.0) {
      p.centroid_row = wr / w;
      p.centroid_col = wc / w;
    } else {
      p.centroid_row = 0.5 * (p.row_min + p.row_max);
      p.centroid_col = 0.5 * (p.col_min + p.col_max);
    }
    p.region = region_index(p.centroid_row, p.centroid_col, frame.rows(), frame.cols(), regions);
    p.pixels = std::move(comp);
    out.push_back(std::move(p));
  }
  return out;
}

Psf estimate_psfs(const ImageSequence& seq, const LocalizeOptions& opt) {
  require(!seq.frames.empty(), "estimate_psfs: empty sequence");
  require(opt.psf_singles > 0 && opt.regions > 0, "estimate_psfs: invalid options");
  const int rows = seq.frames[0].rows(), cols = seq.frames[0].cols();
  const int n_regions = opt.regions * opt.regions;

  std::vector<Candidate> cands;
  std::vector<int> all_r, all_c;
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    const ImageD& f = seq.frames[k];
    // templates are averaged from clearly visible bubbles only; noise specks in
    // empty regions would otherwise make a template of their own
    const double med = median(f.values());
    const double significant = med + opt.psf_min_snr * 1.4826 * mad(f.values(), med);
    for (auto& p : segment_patches(adaptive_threshold(f, opt.sensitivity, opt.noise_mads), f, static_cast<int>(k),
                                   opt.regions)) {
      if (p.pixels.size() < 3) continue;
      Candidate c;
      half_max_widths(p, f, c);
      if (!(f(c.peak_r, c.peak_c) > significant)) continue;
      c.patch = std::move(p);
      all_r.push_back(c.fwhm_r);
      all_c.push_back(c.fwhm_c);
      cands.push_back(std::move(c));
    }
  }
  if (cands.empty()) fail(ErrorCode::Numerical, "estimate_psfs: no bubble patches found");
  const double fr = median_int(all_r), fc = median_int(all_c);
  const ImageD generic = gaussian_template(std::max(0.5, fwhm_to_sigma(fr)), std::max(0.5, fwhm_to_sigma(fc)));
  const int hr = std::max(2, static_cast<int>(std::ceil(1.5 * fr)));
  const int hc = std::max(2, static_cast<int>(std::ceil(1.5 * fc)));

  // qualifying singles per region; a crop window must not reach into another patch
  std::vector<std::vector<const Candidate*>> singles(n_regions);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const Candidate& c = cands[i];
    if (c.peak_r - hr < 0 || c.peak_c - hc < 0 || c.peak_r + hr >= rows || c.peak_c + hc >= cols) continue;
    if (c.patch.height() >= 3 * c.fwhm_r || c.patch.width() >= 3 * c.fwhm_c) continue;
    bool crowded = false;
    for (std::size_t j = 0; j < cands.size() && !crowded; ++j) {
      const Patch& o = cands[j].patch;
      if (j == i || o.frame != c.patch.frame) continue;
      if (o.row_max < c.peak_r - hr || o.row_min > c.peak_r + hr || o.col_max < c.peak_c - hc ||
          o.col_min > c.peak_c + hc)
        continue;
      for (const auto& [r, cc] : o.pixels)
        if (std::abs(r - c.peak_r) <= hr && std::abs(cc - c.peak_c) <= hc) {
          crowded = true;
          break;
        }
    }
    if (crowded) continue;
    const Canvas cv = patch_canvas(c.patch, seq.frames[c.patch.frame], generic.rows() / 2, generic.cols() / 2);
    if (ncc_islands(cv, generic, opt.ncc_threshold).size() != 1) continue;
    singles[c.patch.region].push_back(&c);
  }

  // spread the picks over the sequence so one slow bubble does not dominate
  std::vector<ImageD> sums(n_regions, ImageD(2 * hr + 1, 2 * hc + 1));
  std::vector<int> counts(n_regions, 0);
  for (int reg = 0; reg < n_regions; ++reg) {
    const auto& list = singles[reg];
    const int n = static_cast<int>(list.size());
    if (n < opt.psf_singles) continue;
    for (int k = 0; k < opt.psf_singles; ++k) {
      const Candidate& c = *list[static_cast<std::size_t>(k) * n / opt.psf_singles];
      const ImageD& f = seq.frames[c.patch.frame];
      for (int i = -hr; i <= hr; ++i)
        for (int j = -hc; j <= hc; ++j) sums[reg](i + hr, j + hc) += f(c.peak_r + i, c.peak_c + j);
      ++counts[reg];
    }
  }

  Psf psf;
  psf.image_rows = rows;
  psf.image_cols = cols;
  psf.regions_z = psf.regions_x = opt.regions;
  psf.templates.assign(n_regions, ImageD());
  psf.estimated.assign(n_regions, false);
  for (int k = 0; k < n_regions; ++k) {
    if (counts[k] < opt.psf_singles) continue;
    ImageD t = sums[k];
    const double peak = *std::max_element(t.begin(), t.end());
    if (!(peak > 0.0)) continue;
    for (auto& v : t) v /= peak;
    psf.templates[k] = std::move(t);
    psf.estimated[k] = true;
  }
  for (int k = 0; k < n_regions; ++k) {
    if (psf.estimated[k]) continue;
    if (!opt.psf_fallback)
      fail(ErrorCode::Numerical, "estimate_psfs: insufficient single-bubble patches in region " + std::to_string(k));
    int best = -1;
    double best_d = INFINITY;
    for (int j = 0; j < n_regions; ++j) {
      if (!psf.estimated[j]) continue;
      const double d = std::hypot(j / opt.regions - k / opt.regions, j % opt.regions - k % opt.regions);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best < 0) fail(ErrorCode::Numerical, "estimate_psfs: insufficient single-bubble patches in every region");
    psf.templates[k] = psf.templates[best];
  }
  psf.validate();
  return psf;
}

double snap_to_grid(double v_um, double grid_um) { return std::round(v_um / grid_um) * grid_um; }

std::vector<Localization> localize_patch(const Patch& patch, const ImageD& frame, const ImageD& templ,
                                         const Grid& grid, const LocalizeOptions& opt) {
  std::vector<Localization> out;
  if (patch.pixels.empty()) return out;
  const Canvas cv = patch_canvas(patch, frame, templ.rows() / 2, templ.cols() / 2);
  for (const auto& island : ncc_islands(cv, templ, opt.ncc_threshold)) {
    double w = 0.0, wr = 0.0, wc = 0.0;
    for (const auto& [r, c] : island) {
      const double v = cv.img(r, c);
      if (v <= 0.0) continue;
      w += v;
      wr += v * (r + cv.r0);
      wc += v * (c + cv.c0);
    }
    if (!(w > 0.0)) continue;
    Localization loc;
    loc.frame = patch.frame;
    loc.x_um = snap_to_grid(grid.x(wc / w) * 1e3, opt.grid_um);
    loc.z_um = snap_to_grid(grid.z(wr / w) * 1e3, opt.grid_um);
    loc.intensity = w;
    out.push_back(loc);
  }
  return out;
}

std::vector<Localization> localize_frame(const ImageD& frame, int frame_index, const Psf& psf, const Grid& grid,
                                         const LocalizeOptions& opt) {
  require(psf.image_rows == frame.rows() && psf.image_cols == frame.cols(), "localize: PSF extent does not match frame");
  std::vector<Localization> out;
  const Mask mask = adaptive_threshold(frame, opt.sensitivity, opt.noise_mads);
  for (const auto& p : segment_patches(mask, frame, frame_index, psf.regions_z)) {
    const int region = psf.region_of(p.centroid_row, p.centroid_col);
    auto locs = localize_patch(p, frame, psf.at(region), grid, opt);
    out.insert(out.end(), locs.begin(), locs.end());
  }
  return out;
}

std::vector<Localization> localize_sequence(const ImageSequence& seq, const Psf& psf, const LocalizeOptions& opt) {
  std::vector<std::vector<Localization>> per(seq.frames.size());
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < static_cast<int>(seq.frames.size()); ++k) {
    const int idx = seq.frame_index.empty() ? k : seq.frame_index[k];
    per[k] = localize_frame(seq.frames[k], idx, psf, seq.grid, opt);
  }
  std::vector<Localization> out;
  for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
  return out;
}

void write_localizations_csv(std::ostream& os, const std::vector<Localization>& locs) {
  os << "frame,x_um,z_um,intensity\n" << std::setprecision(12);
  for (const auto& l : locs) os << l.frame << ',' << l.x_um << ',' << l.z_um << ',' << l.intensity << '\n';
}

std::vector<Localization> read_localizations_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("frame,x_um,z_um,intensity", 0) != 0)
    fail(ErrorCode::MissingInput, "localizations CSV: missing or unexpected header");
  std::vector<Localization> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Localization l;
    char c1, c2, c3;
    if (!(ls >> l.frame >> c1 >> l.x_um >> c2 >> l.z_um >> c3 >> l.intensity) || c1 != ',' || c2 != ',' || c3 != ',')
      fail(ErrorCode::ConfigInvalid, "localizations CSV: malformed line '" + line + "'");
    out.push_back(l);
  }
  return out;
}

}  // namespace ulm
