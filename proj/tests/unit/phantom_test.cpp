#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "ulm/phantom.hpp"

using namespace ulm;

TEST_CASE("compounded frame rate") {
  CHECK(compounded_frame_rate(5490.0, 6, 3) == 305.0);
  ProbeGeometry p;
  CHECK(p.compounded_frame_rate() == 305.0);
  CHECK(p.wavelength_mm() == doctest::Approx(0.641667).epsilon(1e-6));
}

TEST_CASE("two parallel vessels half a wavelength apart") {
  const double lambda = ProbeGeometry{}.wavelength_mm();
  const PhantomScene s = two_parallel_vessels(0.5 * lambda, -2.0, 2.0, 20.0, 20.0, 20.0, 1.0, 1);
  REQUIRE(s.vessels.size() == 2);
  const double sep = std::abs(s.vessels[0].centerline[0].z - s.vessels[1].centerline[0].z);
  CHECK(sep * 1e3 == doctest::Approx(320.83).epsilon(1e-4));
}

TEST_CASE("empty scene has no bubbles") {
  PhantomScene s;
  const GroundTruth gt = simulate_bubbles(s, 1.0, 305.0, 1);
  CHECK(gt.bubbles.empty());
  CHECK(gt.frame_count == 305);
}

TEST_CASE("duration sets the frame count") {
  PhantomScene s;
  CHECK(simulate_bubbles(s, 10.0, 305.0, 1).frame_count == 3050);
}

TEST_CASE("bubble counts follow branch length") {
  nlohmann::json spec = {{"concentration", 100.0},
                         {"seed", 4},
                         {"vessels",
                          {{{"centerline", {{0.0, 15.0}, {0.0, 18.0}}}, {"speed_mms", 10.0}},
                           {{"centerline", {{0.0, 18.0}, {-2.0, 20.0}}}, {"speed_mms", 10.0}},
                           {{"centerline", {{0.0, 18.0}, {4.0, 22.0}}}, {"speed_mms", 10.0}}}}};
  const PhantomScene s = make_scene(spec);
  const GroundTruth gt = simulate_bubbles(s, 2.0, 305.0, 4);
  std::vector<double> per(3, 0.0);
  for (const auto& b : gt.bubbles) per[b.vessel] += b.points.size();
  std::vector<double> len;
  for (const auto& v : s.vessels) len.push_back(v.length_mm());
  for (int k = 1; k < 3; ++k) CHECK(per[k] / per[0] == doctest::Approx(len[k] / len[0]).epsilon(0.2));
}

TEST_CASE("inter-frame displacement is v / f") {
  Vessel v;
  v.centerline = {{-4.0, 20.0}, {4.0, 20.0}};
  const GroundTruth gt = bubble_train(v, 2.0, 100.0, 10, 305.0, 1, 0.0);
  REQUIRE(gt.bubbles.size() > 2);
  const auto& pts = gt.bubbles[gt.bubbles.size() / 2].points;
  REQUIRE(pts.size() >= 2);
  CHECK((pts[1].position - pts[0].position).norm() == doctest::Approx(0.3279).epsilon(1e-3));
}

TEST_CASE("bubble train violates the nearest-neighbour bound") {
  Vessel v;
  v.centerline = {{-4.0, 20.0}, {4.0, 20.0}};
  const double d_b = 0.5, f = 305.0;
  const GroundTruth gt = bubble_train(v, d_b, 0.6 * d_b * f, 2, f, 1, 0.0);
  const auto by = gt.by_frame();
  int wrong = 0, total = 0;
  for (const auto& [bi, pi] : by[1]) {
    const Vec2 p = gt.bubbles[bi].points[pi].position;
    double best = 1e9;
    int who = -1;
    for (const auto& [bj, pj] : by[0]) {
      const double d = (gt.bubbles[bj].points[pj].position - p).norm();
      if (d < best) {
        best = d;
        who = bj;
      }
    }
    bool existed = false;
    for (const auto& [bj, pj] : by[0]) existed = existed || bj == bi;
    if (!existed) continue;
    ++total;
    wrong += who != bi;
  }
  CHECK(total > 5);
  CHECK(wrong == total);
}

TEST_CASE("CEUS rendering") {
  const Grid g{32, 32, -1.6, 18.4, 0.1, 0.1};
  const Psf psf = Psf::gaussian(32, 32, 1.5);
  GroundTruth gt;
  gt.frame_count = 1;
  SUBCASE("no bubbles, no noise gives zeros") {
    const ImageSequence s = render_ceus(gt, psf, g, {});
    REQUIRE(s.size() == 1);
    CHECK(*std::max_element(s.frames[0].begin(), s.frames[0].end()) == 0.0);
  }
  SUBCASE("single static bubble stamps the template") {
    BubbleTrajectory b;
    b.points.push_back({0, g.position(16, 16), {0.0, 0.0}});
    gt.bubbles.push_back(b);
    const ImageSequence seq = render_ceus(gt, psf, g, {});
    const ImageD& f = seq.frames[0];
    const auto it = std::max_element(f.begin(), f.end());
    const int idx = static_cast<int>(it - f.begin());
    CHECK(std::abs(idx / 32 - 16) <= 1);
    CHECK(std::abs(idx % 32 - 16) <= 1);
    CHECK(*it == doctest::Approx(1.0).epsilon(0.05));
  }
  SUBCASE("noise level sets the SNR") {
    const ImageSequence s = render_ceus(gt, psf, g, {0.1, false, 3});
    double ss = 0.0;
    for (double v : s.frames[0]) ss += v * v;
    const double sd = std::sqrt(ss / s.frames[0].size());
    CHECK(20.0 * std::log10(1.0 / sd) == doctest::Approx(20.0).epsilon(0.05));
  }
}

TEST_CASE("AM triplet of a linear scatterer cancels") {
  ProbeGeometry probe;
  PhantomScene s;
  s.tissue.push_back({{0.0, 20.0}, 1.0, 0.0});
  GroundTruth gt;
  gt.frame_count = 1;
  ChannelSynthesisOptions o;
  o.depth_max_mm = 25.0;
  o.include_bubbles = false;
  const auto d = synthesize_channels(gt, s, probe, o);
  double full = 0.0, res = 0.0;
  for (const auto& t : d)
    for (std::size_t i = 0; i < t.pulses[0].size(); ++i) {
      full = std::max(full, std::abs(t.pulses[0][i]));
      res = std::max(res, std::abs(t.pulses[0][i] - t.pulses[1][i] - t.pulses[2][i]));
    }
  CHECK(full > 0.0);
  CHECK(res <= full * 1e-3);
}

TEST_CASE("AM residual of a bubble follows the quadratic model") {
  ProbeGeometry probe;
  PhantomScene s;
  s.bubble_nonlinearity = 0.1;
  GroundTruth gt;
  gt.frame_count = 1;
  BubbleTrajectory b;
  b.points.push_back({0, {0.0, 20.0}, {0.0, 0.0}});
  gt.bubbles.push_back(b);
  ChannelSynthesisOptions o;
  o.depth_max_mm = 25.0;
  o.include_tissue = false;
  const auto d = synthesize_channels(gt, s, probe, o);
  const auto& t = d[0];
  double full = 0.0, res = 0.0;
  for (std::size_t i = 0; i < t.pulses[0].size(); ++i) {
    full = std::max(full, std::abs(t.pulses[0][i]));
    res = std::max(res, std::abs(t.pulses[0][i] - t.pulses[1][i] - t.pulses[2][i]));
  }
  // a = 1 for the full pulse, 0.5 for each half: eps (1 - 0.25 - 0.25) over (1 + eps)
  CHECK(res / full == doctest::Approx(0.1 * 0.5 / 1.1).epsilon(1e-9));
}

TEST_CASE("echo delay oracle") {
  ProbeGeometry probe;
  const Vec2 p{0.0, 30.0};
  for (int e : {0, 40, 79}) {
    const Vec2 src = probe.virtual_source(0.0);
    const double expect = ((p - src).norm() - probe.virtual_source_mm + std::hypot(p.x - probe.element_x(e), p.z)) /
                          probe.c_mm_per_us();
    CHECK(echo_delay_us(probe, 0.0, p, e) == doctest::Approx(expect).epsilon(0.5 / probe.sample_rate_mhz / expect));
  }
  CHECK(probe.virtual_source(0.0).z == doctest::Approx(-21.6));
}

TEST_CASE("motion program") {
  MotionProgram m;
  CHECK_FALSE(m.enabled());
  CHECK(m.displacement({1.0, 20.0}, 0.3).norm() == 0.0);
  m.peak_displacement_mm = 0.3;
  m.period_s = 1.0;
  CHECK(m.systole_onsets(10.0).size() == 10);
  CHECK(m.contraction(0.0) == doctest::Approx(0.0));
}
