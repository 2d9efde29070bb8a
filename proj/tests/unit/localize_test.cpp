#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "ulm/localize.hpp"
#include "ulm/phantom.hpp"

using namespace ulm;

namespace {

// Isolated static bubbles at random sub-pixel positions, a fresh set each frame.
GroundTruth scattered(const Grid& g, int frames, int per_frame, double min_sep_px, unsigned seed,
                      double margin_px = 8.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ur(margin_px, g.rows - 1 - margin_px), uc(margin_px, g.cols - 1 - margin_px);
  GroundTruth gt;
  gt.frame_count = frames;
  for (int k = 0; k < frames; ++k) {
    std::vector<std::pair<double, double>> placed;
    for (int tries = 0; tries < 1000 && static_cast<int>(placed.size()) < per_frame; ++tries) {
      const double r = ur(rng), c = uc(rng);
      bool ok = true;
      for (auto [pr, pc] : placed) ok = ok && std::hypot(r - pr, c - pc) >= min_sep_px;
      if (!ok) continue;
      placed.push_back({r, c});
      BubbleTrajectory b;
      b.id = static_cast<int>(gt.bubbles.size());
      b.points.push_back({k, g.position(r, c), {0.0, 0.0}});
      gt.bubbles.push_back(b);
    }
  }
  return gt;
}

double half_max_width(const ImageD& t, bool along_rows) {
  const int r0 = t.rows() / 2, c0 = t.cols() / 2;
  const int n = along_rows ? t.rows() : t.cols();
  auto at = [&](int i) { return along_rows ? t(i, c0) : t(r0, i); };
  const int mid = along_rows ? r0 : c0;
  auto edge = [&](int dir) {
    int i = mid;
    while (i + dir >= 0 && i + dir < n && at(i + dir) >= 0.5) i += dir;
    if (i + dir < 0 || i + dir >= n) return static_cast<double>(i);
    const double a = at(i), b = at(i + dir);
    return i + dir * (a - 0.5) / (a - b);
  };
  return edge(1) - edge(-1);
}

}  // namespace

TEST_CASE("adaptive threshold") {
  SUBCASE("all-zero frame") {
    const Mask m = adaptive_threshold(ImageD(32, 32));
    for (auto v : m) CHECK(v == 0);
  }
  SUBCASE("noise alone stays below the floor") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageD f(64, 64);
    for (auto& v : f) v = u(rng);
    const Mask m = adaptive_threshold(f);
    int on = 0;
    for (auto v : m) on += v;
    // uniform noise: median + 3 MAD = 0.5 + 0.75 is above every sample
    CHECK(on == 0);
  }
  SUBCASE("single blob covers its core") {
    const Grid g{41, 41, 0.0, 0.0, 0.05, 0.05};
    GroundTruth gt;
    gt.frame_count = 1;
    BubbleTrajectory b;
    b.points.push_back({0, g.position(20, 20), {0.0, 0.0}});
    gt.bubbles.push_back(b);
    const ImageD f = render_ceus(gt, Psf::gaussian(41, 41, 2.0), g, {}).frames[0];
    const Mask m = adaptive_threshold(f);
    int width = 0;
    for (int c = 0; c < 41; ++c) width += m(20, c);
    CHECK(m(20, 20) == 1);
    CHECK(width >= std::ceil(2.355 * 2.0));
  }
}

TEST_CASE("patch segmentation") {
  ImageD f(20, 20);
  Mask m(20, 20);
  CHECK(segment_patches(m, f, 0).empty());
  for (int r = 2; r < 5; ++r)
    for (int c = 2; c < 5; ++c) m(r, c) = 1, f(r, c) = 1.0;
  for (int r = 12; r < 15; ++r)
    for (int c = 13; c < 16; ++c) m(r, c) = 1, f(r, c) = 1.0;
  // diagonal neighbour joins under 8-connectivity
  m(5, 5) = 1;
  f(5, 5) = 1.0;
  const auto p = segment_patches(m, f, 7);
  REQUIRE(p.size() == 2);
  CHECK(p[0].frame == 7);
  CHECK(p[0].pixels.size() + p[1].pixels.size() == 19);
  // region by centroid: rows 2..5 of 20 in a 5x5 partition is band 0 or 1, cols 13..15 band 3
  for (const auto& q : p)
    if (q.centroid_col > 10) CHECK(q.region == 3 * 5 / 5 * 0 + (12 * 5 / 20) * 5 + 3);
}

TEST_CASE("region assignment follows the centroid") {
  Mask m(20, 20);
  ImageD f(20, 20);
  // straddles the col 8 boundary of a 5x5 partition, heavier on the right
  for (int c = 6; c < 11; ++c) m(10, c) = 1, f(10, c) = c < 8 ? 0.1 : 1.0;
  const auto p = segment_patches(m, f, 0);
  REQUIRE(p.size() == 1);
  CHECK(p[0].region == 2 * 5 + 2);
}

TEST_CASE("PSF estimation") {
  const Grid g{100, 100, 0.0, 10.0, 0.05, 0.05};
  LocalizeOptions opt;
  SUBCASE("Gaussian sigma 2 px is recovered") {
    const GroundTruth gt = scattered(g, 60, 14, 18.0, 2);
    const ImageSequence seq = render_ceus(gt, Psf::gaussian(100, 100, 2.0), g, {0.01, false, 2});
    const Psf psf = estimate_psfs(seq, opt);
    int checked = 0;
    for (int k = 0; k < psf.region_count(); ++k) {
      if (!psf.estimated[k]) continue;
      ++checked;
      CHECK(half_max_width(psf.at(k), true) / 2.3548 == doctest::Approx(2.0).epsilon(0.1));
      CHECK(half_max_width(psf.at(k), false) / 2.3548 == doctest::Approx(2.0).epsilon(0.1));
    }
    CHECK(checked >= 20);
  }
  SUBCASE("templates widen with depth") {
    const GroundTruth gt = scattered(g, 80, 12, 20.0, 3);
    const Psf truth = Psf::gaussian(
        100, 100, [](double r, double) { return std::pair{1.5 + r / 50.0, 1.8}; }, 5, 5);
    const ImageSequence seq = render_ceus(gt, truth, g, {0.01, false, 3});
    const Psf psf = estimate_psfs(seq, opt);
    std::vector<double> w(5, 0.0);
    std::vector<int> n(5, 0);
    for (int k = 0; k < 25; ++k)
      if (psf.estimated[k]) {
        w[k / 5] += half_max_width(psf.at(k), true);
        ++n[k / 5];
      }
    for (int b = 0; b < 5; ++b) REQUIRE(n[b] > 0);
    for (int b = 1; b < 5; ++b) CHECK(w[b] / n[b] > w[b - 1] / n[b - 1]);
  }
  SUBCASE("scarce singles borrow a neighbour") {
    // bubbles only in the top-left quarter of a 2x2 partition
    const Grid small{60, 60, 0.0, 10.0, 0.05, 0.05};
    GroundTruth gt = scattered({30, 30, 0.0, 10.0, 0.05, 0.05}, 40, 1, 10.0, 4, 10.0);
    const ImageSequence seq = render_ceus(gt, Psf::gaussian(60, 60, 1.5, 2), small, {0.01, false, 4});
    LocalizeOptions o = opt;
    o.regions = 2;
    const Psf psf = estimate_psfs(seq, o);
    CHECK(psf.estimated[0]);
    for (int k = 1; k < 4; ++k) {
      CHECK_FALSE(psf.estimated[k]);
      CHECK(psf.at(k).values() == psf.at(0).values());
    }
    o.psf_fallback = false;
    try {
      estimate_psfs(seq, o);
      FAIL("expected insufficient singles");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Numerical);
    }
  }
}

TEST_CASE("localization accuracy") {
  const Grid g{40, 40, 0.0, 10.0, 0.025, 0.025};
  const Psf psf = Psf::gaussian(40, 40, 1.5);
  LocalizeOptions opt;
  SUBCASE("single stamp lands within one grid step") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(15.0, 25.0);
    for (int t = 0; t < 50; ++t) {
      GroundTruth gt;
      gt.frame_count = 1;
      BubbleTrajectory b;
      b.points.push_back({0, g.position(u(rng), u(rng)), {0.0, 0.0}});
      gt.bubbles.push_back(b);
      const ImageSequence s = render_ceus(gt, psf, g, {});
      const auto locs = localize_frame(s.frames[0], 0, psf, g, opt);
      REQUIRE(locs.size() == 1);
      const Vec2 p = b.points[0].position;
      CHECK(std::hypot(locs[0].x_um - 1e3 * p.x, locs[0].z_um - 1e3 * p.z) <= 13.5);
      CHECK(locs[0].intensity > 0.0);
    }
  }
  SUBCASE("bias over 1000 positions at 20 dB") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(15.0, 25.0);
    double sum_abs = 0.0, sx = 0.0, sz = 0.0;
    int n = 0, missed = 0;
    for (int t = 0; t < 1000; ++t) {
      GroundTruth gt;
      gt.frame_count = 1;
      BubbleTrajectory b;
      b.points.push_back({0, g.position(u(rng), u(rng)), {0.0, 0.0}});
      gt.bubbles.push_back(b);
      const ImageSequence s = render_ceus(gt, psf, g, {0.1, false, static_cast<std::uint64_t>(100 + t)});
      const auto locs = localize_frame(s.frames[0], 0, psf, g, opt);
      if (locs.empty()) {
        ++missed;
        continue;
      }
      const Vec2 p = b.points[0].position;
      double best = 1e300, ex = 0.0, ez = 0.0;
      for (const auto& l : locs) {
        const double e = std::hypot(l.x_um - 1e3 * p.x, l.z_um - 1e3 * p.z);
        if (e < best) {
          best = e;
          ex = l.x_um - 1e3 * p.x;
          ez = l.z_um - 1e3 * p.z;
        }
      }
      sum_abs += best;
      sx += ex;
      sz += ez;
      ++n;
    }
    CHECK(missed < 10);
    CHECK(sum_abs / n <= 13.5 + 0.1 * 25.0);
    CHECK(std::abs(sx / n) < 2.0);
    CHECK(std::abs(sz / n) < 2.0);
  }
  SUBCASE("two bubbles 1.5 PSF widths apart") {
    GroundTruth gt;
    gt.frame_count = 1;
    const double sep = 1.5 * 2.3548 * 1.5;
    for (double c : {20.0 - sep / 2, 20.0 + sep / 2}) {
      BubbleTrajectory b;
      b.points.push_back({0, g.position(20.0, c), {0.0, 0.0}});
      gt.bubbles.push_back(b);
    }
    const ImageSequence s = render_ceus(gt, psf, g, {});
    CHECK(localize_frame(s.frames[0], 0, psf, g, opt).size() == 2);
  }
  SUBCASE("pure noise patch gives nothing") {
    Patch p;
    p.row_min = p.col_min = 10;
    p.row_max = p.col_max = 12;
    ImageD f(40, 40);
    f(10, 10) = f(12, 12) = 1.0;
    f(10, 12) = f(12, 10) = 1.0;
    for (int r = 10; r <= 12; ++r)
      for (int c = 10; c <= 12; ++c) p.pixels.push_back({r, c});
    CHECK(localize_patch(p, f, gaussian_template(3.0, 3.0), g, opt).empty());
  }
}

TEST_CASE("lowering the NCC threshold never loses localizations") {
  const Grid g{80, 80, 0.0, 10.0, 0.05, 0.05};
  const Psf psf = Psf::gaussian(80, 80, 1.8);
  // bubbles at least two FWHM apart
  const GroundTruth gt = scattered(g, 20, 30, 8.5, 7, 4.0);
  const ImageSequence s = render_ceus(gt, psf, g, {0.05, false, 7});
  for (int k = 0; k < 20; ++k) {
    std::size_t prev = SIZE_MAX;
    for (double thr : {0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
      LocalizeOptions o;
      o.ncc_threshold = thr;
      const std::size_t n = localize_frame(s.frames[k], k, psf, g, o).size();
      if (prev != SIZE_MAX) CHECK(n <= prev);
      prev = n;
    }
  }
}

TEST_CASE("bias invariant at a coarse pixel") {
  // 100 um pixels, as the pipeline configs use; centroid bias is about 0.1 px
  const Grid g{40, 40, 0.0, 10.0, 0.1, 0.1};
  const Psf psf = Psf::gaussian(40, 40, 1.5);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(15.0, 25.0);
  double sum_abs = 0.0;
  int n = 0;
  for (int t = 0; t < 1000; ++t) {
    GroundTruth gt;
    gt.frame_count = 1;
    BubbleTrajectory b;
    b.points.push_back({0, g.position(u(rng), u(rng)), {0.0, 0.0}});
    gt.bubbles.push_back(b);
    const ImageSequence s = render_ceus(gt, psf, g, {0.1, false, static_cast<std::uint64_t>(5000 + t)});
    const auto locs = localize_frame(s.frames[0], 0, psf, g);
    if (locs.empty()) continue;
    const Vec2 p = b.points[0].position;
    double best = 1e300;
    for (const auto& l : locs) best = std::min(best, std::hypot(l.x_um - 1e3 * p.x, l.z_um - 1e3 * p.z));
    sum_abs += best;
    ++n;
  }
  CHECK(n > 990);
  CHECK(sum_abs / n <= 13.5 + 0.1 * 100.0);
}

TEST_CASE("close pair merges into one island at a low NCC threshold") {
  // counterexample to threshold monotonicity inside one crowded patch
  const Grid g{40, 40, 0.0, 10.0, 0.05, 0.05};
  const Psf psf = Psf::gaussian(40, 40, 1.8);
  GroundTruth gt;
  gt.frame_count = 1;
  for (double c : {16.75, 23.25}) {
    BubbleTrajectory b;
    b.points.push_back({0, g.position(20.0, c), {0.0, 0.0}});
    gt.bubbles.push_back(b);
  }
  const ImageSequence s = render_ceus(gt, psf, g, {});
  LocalizeOptions hi, lo;
  hi.ncc_threshold = 0.6;
  lo.ncc_threshold = 0.4;
  CHECK(localize_frame(s.frames[0], 0, psf, g, hi).size() == 2);
  CHECK(localize_frame(s.frames[0], 0, psf, g, lo).size() == 1);
}

TEST_CASE("outputs sit on the 13.5 um grid") {
  CHECK(snap_to_grid(20.0, 13.5) == 13.5);
  CHECK(snap_to_grid(21.0, 13.5) == 27.0);
  CHECK(snap_to_grid(-7.0, 13.5) == -13.5);
  const Grid g{60, 60, -1.3, 17.1, 0.05, 0.05};
  const Psf psf = Psf::gaussian(60, 60, 1.5);
  const GroundTruth gt = scattered(g, 5, 8, 10.0, 8);
  const ImageSequence s = render_ceus(gt, psf, g, {0.05, false, 8});
  const auto locs = localize_sequence(s, psf);
  CHECK(locs.size() >= 30);
  for (const auto& l : locs) {
    CHECK(std::abs(l.x_um / 13.5 - std::round(l.x_um / 13.5)) < 1e-9);
    CHECK(std::abs(l.z_um / 13.5 - std::round(l.z_um / 13.5)) < 1e-9);
    CHECK(g.inside({l.x_um * 1e-3, l.z_um * 1e-3}));
  }
}

TEST_CASE("localization CSV round trip") {
  std::vector<Localization> locs{{0, 13.5, 27.0, 1.25}, {3, -40.5, 20250.0, 0.001}};
  std::stringstream ss;
  write_localizations_csv(ss, locs);
  const auto back = read_localizations_csv(ss);
  REQUIRE(back.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(back[i].frame == locs[i].frame);
    CHECK(back[i].x_um == locs[i].x_um);
    CHECK(back[i].z_um == locs[i].z_um);
    CHECK(back[i].intensity == doctest::Approx(locs[i].intensity));
  }
}
