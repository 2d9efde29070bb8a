#include "ulm/frc.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "ulm/fft.hpp"
#include "ulm/render.hpp"
#include "ulm/rng.hpp"

namespace ulm {

double half_bit_threshold(double n) {
  const double s = std::sqrt(std::max(n, 1.0));
  return (0.2071 + 1.9102 / s) / (1.2071 + 0.9102 / s);
}

FrcResult frc(const ImageD& a, const ImageD& b, double pitch_mm) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "frc: images differ in shape");
  require(pitch_mm > 0.0 && !a.empty(), "frc: invalid input");
  const int rows = a.rows(), cols = a.cols();
  const ImageC fa = fft::forward2d(a), fb = fft::forward2d(b);
  const double df = 1.0 / (std::max(rows, cols) * pitch_mm);
  const double nyquist = 0.5 / pitch_mm;
  const int rings = static_cast<int>(std::floor(nyquist / df));

  std::vector<double> cross(rings + 1, 0.0), pa(rings + 1, 0.0), pb(rings + 1, 0.0);
  std::vector<int> count(rings + 1, 0);
  for (int r = 0; r < rows; ++r) {
    const int kr = r <= rows / 2 ? r : r - rows;
    const double fz = kr / (rows * pitch_mm);
    for (int c = 0; c < cols; ++c) {
      const int kc = c <= cols / 2 ? c : c - cols;
      const double fx = kc / (cols * pitch_mm);
      const int ring = static_cast<int>(std::lround(std::hypot(fx, fz) / df));
      if (ring > rings) continue;
      const cdouble u = fa(r, c), v = fb(r, c);
      cross[ring] += (u * std::conj(v)).real();
      pa[ring] += std::norm(u);
      pb[ring] += std::norm(v);
      ++count[ring];
    }
  }

  FrcResult res;
  for (int i = 1; i <= rings; ++i) {
    if (count[i] == 0) continue;
    const double den = std::sqrt(pa[i] * pb[i]);
    res.freq_per_mm.push_back(i * df);
    res.frc.push_back(den > 0.0 ? cross[i] / den : 0.0);
    res.half_bit.push_back(half_bit_threshold(count[i]));
    res.ring_pixels.push_back(count[i]);
  }
  if (res.frc.empty()) return res;
  if (res.frc[0] < res.half_bit[0]) {
    res.status = FrcStatus::Undefined;
    return res;
  }
  for (std::size_t i = 1; i < res.frc.size(); ++i) {
    if (res.frc[i] >= res.half_bit[i]) continue;
    const double g0 = res.frc[i - 1] - res.half_bit[i - 1], g1 = res.frc[i] - res.half_bit[i];
    const double t = g0 / (g0 - g1);
    res.crossing_per_mm = res.freq_per_mm[i - 1] + t * (res.freq_per_mm[i] - res.freq_per_mm[i - 1]);
    res.resolution_um = 1e3 / res.crossing_per_mm;
    res.status = FrcStatus::Resolved;
    return res;
  }
  res.status = FrcStatus::BelowGridLimit;
  res.resolution_um = 2.0 * pitch_mm * 1e3;
  return res;
}

FrcResult frc_resolution(const std::vector<Track>& tracks, const Grid& grid, std::uint64_t split_seed,
                         int min_track_len) {
  std::vector<Track> half[2];
  auto rng = make_rng(split_seed, kStreamSplit);
  std::bernoulli_distribution coin(0.5);
  for (const auto& t : tracks) {
    if (static_cast<int>(t.size()) < min_track_len) continue;
    half[coin(rng) ? 1 : 0].push_back(t);
  }
  if (half[0].empty() || half[1].empty()) return {};
  const ImageD a = rasterize_tracks(half[0], grid, min_track_len).weight;
  const ImageD b = rasterize_tracks(half[1], grid, min_track_len).weight;
  return frc(a, b, grid.dx_mm);
}

void write_frc_csv(std::ostream& os, const FrcResult& r) {
  os << "freq_per_mm,frc,half_bit\n" << std::setprecision(12);
  for (std::size_t i = 0; i < r.frc.size(); ++i) os << r.freq_per_mm[i] << ',' << r.frc[i] << ',' << r.half_bit[i] << '\n';
}

}  // namespace ulm
