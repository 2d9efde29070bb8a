#include "ulm/quantify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "ulm/interp.hpp"

namespace ulm {

double otsu_threshold(const ImageD& img) {
  std::vector<double> v;
  for (double x : img)
    if (std::isfinite(x) && x > 0.0) v.push_back(x);
  if (v.empty()) return 0.0;
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return 0.5 * lo;
  constexpr int B = 256;
  std::vector<double> h(B, 0.0);
  for (double x : v) h[std::min(B - 1, static_cast<int>((x - lo) / (hi - lo) * B))] += 1.0;
  const double n = static_cast<double>(v.size());
  double sum_all = 0.0;
  for (int i = 0; i < B; ++i) sum_all += i * h[i];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int arg = 0;
  for (int t = 0; t < B - 1; ++t) {
    w0 += h[t];
    sum0 += t * h[t];
    const double w1 = n - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      arg = t;
    }
  }
  return lo + (arg + 1.0) * (hi - lo) / B;
}

Mask binarize(const ImageD& img, double threshold) {
  Mask m(img.rows(), img.cols(), 0);
  for (std::size_t i = 0; i < img.size(); ++i) m[i] = std::isfinite(img[i]) && img[i] > threshold;
  return m;
}

Mask skeletonize(const Mask& binary) {
  Mask s = binary;
  const int R = s.rows(), C = s.cols();
  auto px = [&](int r, int c) -> int { return s.contains(r, c) && s(r, c) ? 1 : 0; };
  std::vector<std::pair<int, int>> del;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      del.clear();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
          if (!s(r, c)) continue;
          // P2..P9 clockwise from north
          const int p[8] = {px(r - 1, c), px(r - 1, c + 1), px(r, c + 1), px(r + 1, c + 1),
                            px(r + 1, c), px(r + 1, c - 1), px(r, c - 1), px(r - 1, c - 1)};
          int b = 0, a = 0;
          for (int k = 0; k < 8; ++k) {
            b += p[k];
            a += p[k] == 0 && p[(k + 1) % 8] == 1;
          }
          if (b < 2 || b > 6 || a != 1) continue;
          const bool cond = pass == 0 ? (p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0)
                                      : (p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0);
          if (cond) del.push_back({r, c});
        }
      for (const auto& [r, c] : del) s(r, c) = 0;
      changed = changed || !del.empty();
    }
  }
  return s;
}

namespace {

// 1D squared distance transform of a sampled function (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

}  // namespace

ImageD distance_transform(const Mask& binary) {
  // pad by one background pixel on every side
  const int R = binary.rows() + 2, C = binary.cols() + 2;
  const double big = 1e20;
  ImageD g(R, C, 0.0);
  for (int r = 0; r < binary.rows(); ++r)
    for (int c = 0; c < binary.cols(); ++c) g(r + 1, c + 1) = binary(r, c) ? big : 0.0;
  const int n = std::max(R, C);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int c = 0; c < C; ++c) {
    f.resize(R);
    d.resize(R);
    for (int r = 0; r < R; ++r) f[r] = g(r, c);
    edt_1d(f, d, v, z);
    for (int r = 0; r < R; ++r) g(r, c) = d[r];
  }
  for (int r = 0; r < R; ++r) {
    f.resize(C);
    d.resize(C);
    for (int c = 0; c < C; ++c) f[c] = g(r, c);
    edt_1d(f, d, v, z);
    for (int c = 0; c < C; ++c) g(r, c) = d[c];
  }
  ImageD out(binary.rows(), binary.cols());
  for (int r = 0; r < binary.rows(); ++r)
    for (int c = 0; c < binary.cols(); ++c) out(r, c) = binary(r, c) ? std::sqrt(g(r + 1, c + 1)) : 0.0;
  return out;
}

double Histogram::total() const { return std::accumulate(mass.begin(), mass.end(), 0.0); }

Histogram diameter_distribution(const Mask& centerline, const Mask& binary, double pitch_um, double bin_um,
                                double cap_um) {
  require(centerline.rows() == binary.rows() && centerline.cols() == binary.cols(),
          "diameter_distribution: shape mismatch");
  require(pitch_um > 0.0 && bin_um > 0.0 && cap_um > 0.0, "diameter_distribution: invalid bins");
  const ImageD edt = distance_transform(binary);
  const int cap_bin = static_cast<int>(std::floor(cap_um / bin_um + 1e-9));
  Histogram h;
  for (int b = 0; b <= cap_bin; ++b) {
    h.low.push_back(b * bin_um);
    h.high.push_back((b + 1) * bin_um);
  }
  h.mass.assign(h.low.size(), 0.0);
  double n = 0.0;
  for (std::size_t i = 0; i < centerline.size(); ++i) {
    if (!centerline[i] || !binary[i]) continue;
    const double dia = 2.0 * (edt[i] - 0.5) * pitch_um;
    const int b = std::clamp(static_cast<int>(std::floor(dia / bin_um)), 0, cap_bin);
    h.mass[b] += 1.0;
    n += 1.0;
  }
  if (n == 0.0) fail(ErrorCode::Numerical, "diameter_distribution: empty centerline");
  for (auto& m : h.mass) m /= n;
  return h;
}

LogNormalFit fit_lognormal(const std::vector<double>& values) {
  LogNormalFit f;
  double s = 0.0;
  for (double v : values)
    if (v > 0.0 && std::isfinite(v)) {
      s += std::log(v);
      ++f.samples;
    }
  if (f.samples == 0) fail(ErrorCode::Numerical, "fit_lognormal: no positive samples");
  f.mu = s / f.samples;
  double ss = 0.0;
  for (double v : values)
    if (v > 0.0 && std::isfinite(v)) ss += (std::log(v) - f.mu) * (std::log(v) - f.mu);
  f.sigma = std::sqrt(ss / f.samples);
  f.degenerate = f.sigma < 1e-9;
  f.mean = std::exp(f.mu + 0.5 * f.sigma * f.sigma);
  f.std = f.mean * std::sqrt(std::expm1(f.sigma * f.sigma));
  return f;
}

SpeedDistribution speed_distribution(const ImageD& speed, double bin_mms) {
  require(bin_mms > 0.0, "speed_distribution: bin width must be positive");
  std::vector<double> v;
  for (double x : speed)
    if (std::isfinite(x) && x > 0.0) v.push_back(x);
  if (v.empty()) fail(ErrorCode::Numerical, "speed_distribution: map has no nonzero pixels");
  SpeedDistribution out;
  const double top = *std::max_element(v.begin(), v.end());
  const int bins = static_cast<int>(std::floor(top / bin_mms)) + 1;
  auto& h = out.histogram;
  for (int b = 0; b < bins; ++b) {
    h.low.push_back(b * bin_mms);
    h.high.push_back((b + 1) * bin_mms);
  }
  h.mass.assign(bins, 0.0);
  for (double x : v) h.mass[std::min(bins - 1, static_cast<int>(std::floor(x / bin_mms)))] += 1.0;
  for (auto& m : h.mass) m /= static_cast<double>(v.size());
  out.fit = fit_lognormal(v);
  return out;
}

std::string format_mean_std(double mean, double std, const std::string& unit) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.1f \xC2\xB1 %.1f", mean, std);
  std::string s(buf);
  if (!unit.empty()) s += " " + unit;
  return s;
}

Profile cross_section(const ImageD& img, const Grid& grid, Vec2 p0, Vec2 p1, double step_um, double min_prominence) {
  if (!grid.inside(p0) || !grid.inside(p1)) fail(ErrorCode::InvalidArgument, "cross_section: segment outside the raster");
  require(img.rows() == grid.rows && img.cols() == grid.cols, "cross_section: image does not match grid");
  if (step_um <= 0.0) step_um = 0.5 * grid.dx_mm * 1e3;
  const double len_um = (p1 - p0).norm() * 1e3;
  require(len_um > 0.0, "cross_section: zero-length segment");
  const int n = static_cast<int>(std::floor(len_um / step_um)) + 1;
  Profile p;
  p.s_um.resize(n);
  p.value.resize(n);
  for (int i = 0; i < n; ++i) {
    const double s = i * step_um;
    const Vec2 q = p0 + (p1 - p0) * (s / len_um);
    p.s_um[i] = s;
    p.value[i] = bilinear(img, grid.row_of(q.z), grid.col_of(q.x));
  }
  const double top = *std::max_element(p.value.begin(), p.value.end());
  if (!(top > 0.0)) return p;
  for (auto& v : p.value) v /= top;

  const auto& y = p.value;
  std::vector<int> at;
  for (int i = 1; i + 1 < n; ++i) {
    if (!(y[i] > y[i - 1] && y[i] >= y[i + 1])) continue;
    // prominence: drop to the lowest point before reaching higher ground on each side
    double left = y[i], right = y[i];
    for (int j = i - 1; j >= 0 && y[j] <= y[i]; --j) left = std::min(left, y[j]);
    for (int j = i + 1; j < n && y[j] <= y[i]; ++j) right = std::min(right, y[j]);
    if (y[i] - std::max(left, right) < min_prominence) continue;
    Peak pk;
    const double curv = y[i - 1] - 2.0 * y[i] + y[i + 1];
    const double off = curv < 0.0 ? std::clamp(0.5 * (y[i - 1] - y[i + 1]) / curv, -0.5, 0.5) : 0.0;
    pk.position_um = p.s_um[i] + off * step_um;
    pk.value = y[i];
    const double half = 0.5 * y[i];
    double xl = std::numeric_limits<double>::quiet_NaN(), xr = xl;
    for (int j = i; j > 0; --j)
      if (y[j - 1] < half) {
        xl = p.s_um[j - 1] + (half - y[j - 1]) / (y[j] - y[j - 1]) * step_um;
        break;
      }
    for (int j = i; j + 1 < n; ++j)
      if (y[j + 1] < half) {
        xr = p.s_um[j] + (y[j] - half) / (y[j] - y[j + 1]) * step_um;
        break;
      }
    pk.fwhm_um = xr - xl;
    p.peaks.push_back(pk);
    at.push_back(i);
  }
  for (std::size_t k = 1; k < p.peaks.size(); ++k) {
    p.separations_um.push_back(p.peaks[k].position_um - p.peaks[k - 1].position_um);
    p.troughs.push_back(*std::min_element(y.begin() + at[k - 1], y.begin() + at[k] + 1));
  }
  return p;
}

void write_histogram_csv(std::ostream& os, const Histogram& h) {
  os << "bin_low,bin_high,mass\n" << std::setprecision(12);
  for (std::size_t i = 0; i < h.mass.size(); ++i) os << h.low[i] << ',' << h.high[i] << ',' << h.mass[i] << '\n';
}

}  // namespace ulm
