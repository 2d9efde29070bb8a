#include <cmath>
#include <vector>

#include "common.hpp"
#include "doctest.h"
#include "ulm/moco.hpp"

using namespace ulm;
using testutil::texture;

namespace {

DisplacementField translation(int rows, int cols, double dr, double dc) {
  return {ImageD(rows, cols, dr), ImageD(rows, cols, dc)};
}

}  // namespace

TEST_CASE("SVD keep count") {
  CHECK(svd_keep_count(10000, 20) == 1);
  CHECK(svd_keep_count(10000, 100) == 5);
  CHECK(svd_keep_count(10000, 101) == 6);
  CHECK(svd_keep_count(30, 100) == 2);
  CHECK_THROWS_AS(svd_keep_count(0, 10), Error);
}

TEST_CASE("rank-1 sequence survives the tissue filter") {
  const ImageD base = texture(24, 24, 1);
  std::vector<ImageD> frames;
  for (int k = 0; k < 20; ++k) {
    ImageD f = base;
    for (auto& v : f) v *= 1.0 + 0.1 * std::sin(0.7 * k);
    frames.push_back(f);
  }
  const auto out = svd_tissue(frames);
  for (int k = 0; k < 20; ++k)
    for (std::size_t i = 0; i < out[k].size(); ++i) CHECK(out[k][i] == doctest::Approx(frames[k][i]).epsilon(1e-9));
  CHECK_THROWS_AS(svd_tissue({base}), Error);
}

TEST_CASE("SSIM") {
  const ImageD a = texture(32, 32, 2), b = texture(32, 32, 3);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, b) < 0.5);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
}

TEST_CASE("reference selection") {
  const ImageD a = texture(32, 32, 4);
  CHECK(select_reference(std::vector<ImageD>(5, a)) == 0);
  std::vector<ImageD> frames;
  for (int k = 0; k < 6; ++k) {
    ImageD f = a;
    const ImageD n = texture(32, 32, 100 + k);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] += 0.05 * n[i];
    frames.push_back(f);
  }
  frames[3] = texture(32, 32, 99);
  CHECK(select_reference(frames) != 3);
}

TEST_CASE("cardiac gating") {
  SUBCASE("constant frames have no cycles") {
    ImageSequence s;
    s.frame_rate = 50.0;
    s.frames.assign(40, texture(16, 16, 5));
    CHECK_THROWS_AS(gate_cycles(s), Error);
  }
  SUBCASE("synthetic program") {
    // each beat jumps the tissue by 3 px, then it relaxes back
    const double fr = 50.0, period = 1.0;
    const ImageD tissue = texture(48, 48, 6, 3.0);
    ImageSequence s;
    s.frame_rate = fr;
    std::vector<int> onsets;
    for (int k = 0; k < 250; ++k) {
      const double t = k / fr;
      const double phase = std::fmod(t + 0.3, period);
      if (phase < 0.5 / fr && k > 0) onsets.push_back(k);
      const double d = 3.0 * std::exp(-phase / 0.08);
      s.frames.push_back(apply_motion(tissue, translation(48, 48, d, 0.5 * d), Exec::Serial));
    }
    const CycleGating g = gate_cycles(s);
    REQUIRE(g.systole_starts.size() == onsets.size());
    for (std::size_t i = 0; i < onsets.size(); ++i) CHECK(std::abs(g.systole_starts[i] + 1 - onsets[i]) <= 2);
    for (const auto& [a, b] : g.diastole_windows) {
      CHECK(b - a >= 10);
      CHECK(b - a <= 20);
    }
  }
}

TEST_CASE("stage order") {
  const std::vector<MotionStage> good{MotionStage::Intra, MotionStage::Inter};
  const std::vector<MotionStage> bad{MotionStage::Inter, MotionStage::Intra};
  CHECK_NOTHROW(validate_stage_order(good));
  try {
    validate_stage_order(bad);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigInvalid);
  }
  CHECK(motion_stage_from("intra") == MotionStage::Intra);
  CHECK_THROWS(motion_stage_from("sideways"));
}

TEST_CASE("warping") {
  ImageD imp(21, 21);
  imp(10, 10) = 1.0;
  SUBCASE("zero field is the identity") {
    const ImageD a = texture(21, 21, 7);
    const ImageD b = apply_motion(a, DisplacementField::zero(21, 21));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
  }
  SUBCASE("integer shift moves an impulse") {
    // out(p) = in(p + u): u = (+2, -3) brings the impulse to (8, 13)
    const ImageD b = apply_motion(imp, translation(21, 21, 2.0, -3.0));
    CHECK(b(8, 13) == doctest::Approx(1.0).epsilon(1e-12));
    double rest = 0.0;
    for (int r = 0; r < 21; ++r)
      for (int c = 0; c < 21; ++c)
        if (r != 8 || c != 13) rest += std::abs(b(r, c));
    CHECK(rest < 1e-9);
  }
  SUBCASE("serial and parallel agree") {
    const ImageD a = texture(40, 40, 8);
    DisplacementField u = DisplacementField::zero(40, 40);
    for (int r = 0; r < 40; ++r)
      for (int c = 0; c < 40; ++c) {
        u.dr(r, c) = 1.5 * std::sin(r / 6.0);
        u.dc(r, c) = 0.7 * std::cos(c / 5.0);
      }
    const ImageD s = apply_motion(a, u, Exec::Serial), p = apply_motion(a, u, Exec::Parallel);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == p[i]);
  }
}

TEST_CASE("Jacobian of simple fields") {
  CHECK(min_jacobian(DisplacementField::zero(16, 16)) == doctest::Approx(1.0));
  // uniform 10% expansion
  DisplacementField u = DisplacementField::zero(16, 16);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      u.dr(r, c) = 0.1 * r;
      u.dc(r, c) = 0.1 * c;
    }
  CHECK(min_jacobian(u) == doctest::Approx(1.21));
  // folding
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) u.dc(r, c) = -2.0 * c;
  CHECK(min_jacobian(u) < 0.0);
}

TEST_CASE("affine registration") {
  const ImageD moving = texture(64, 64, 9, 2.5);
  SUBCASE("identity") {
    const AffineParams a = register_affine(moving, moving, AffineParams::identity());
    for (double v : a.p) CHECK(std::abs(v) < 1e-3);
  }
  SUBCASE("translation") {
    const ImageD fixed = apply_motion(moving, translation(64, 64, 3.7, -2.1));
    const AffineParams a = register_affine(fixed, moving, AffineParams::identity());
    CHECK(a.p[4] == doctest::Approx(3.7).epsilon(0.1 / 3.7));
    CHECK(a.p[5] == doctest::Approx(-2.1).epsilon(0.1 / 2.1));
  }
}

TEST_CASE("rigid registration") {
  const ImageD moving = texture(64, 64, 10, 2.5);
  RigidParams truth;
  truth.theta = 3.0 * kPi / 180.0;
  truth.t_r = 2.0;
  truth.t_c = -1.0;
  const ImageD fixed = apply_motion(moving, truth.field(64, 64));
  RegistrationReport rep;
  const RigidParams est = register_rigid(fixed, moving, {}, {}, &rep);
  CHECK(est.theta * 180.0 / kPi == doctest::Approx(3.0).epsilon(0.05));
  CHECK(std::abs(est.t_r - 2.0) < 0.1);
  CHECK(std::abs(est.t_c + 1.0) < 0.1);
  CHECK(rep.final_cost < rep.initial_cost);
}

TEST_CASE("composition of rigid and intra fields") {
  RigidParams rp;
  rp.t_r = 1.0;
  rp.t_c = 2.0;
  const DisplacementField intra = translation(10, 10, 0.5, -0.5);
  const DisplacementField u = compose(intra, rp);
  CHECK(u.dr(4, 4) == doctest::Approx(1.5));
  CHECK(u.dc(4, 4) == doctest::Approx(1.5));
}
