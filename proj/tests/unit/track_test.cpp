#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "ulm/assignment.hpp"
#include "ulm/tracker.hpp"

using namespace ulm;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

Mat2 iso(double sigma) { return Mat2::Identity() * sigma * sigma; }

// exhaustive minimum over partial matchings, unmatched rows and columns at `limit`
double brute_force(const Eigen::MatrixXd& c, double limit) {
  const int n = static_cast<int>(c.rows()), m = static_cast<int>(c.cols());
  std::vector<bool> used(m, false);
  double best = kInf;
  std::function<void(int, double, int)> rec = [&](int r, double acc, int matched) {
    if (r == n) {
      best = std::min(best, acc + limit * (n - matched) + limit * (m - matched));
      return;
    }
    rec(r + 1, acc, matched);
    for (int j = 0; j < m; ++j)
      if (!used[j] && c(r, j) <= limit) {
        used[j] = true;
        rec(r + 1, acc + c(r, j), matched + 1);
        used[j] = false;
      }
  };
  rec(0, 0.0, 0);
  return best;
}

std::vector<Detection> dets(std::initializer_list<std::pair<double, double>> xs, double intensity = 1.0) {
  std::vector<Detection> d;
  for (auto [x, z] : xs) d.push_back({x, z, intensity, static_cast<int>(d.size())});
  return d;
}

}  // namespace

TEST_CASE("motion model structure") {
  const Mat2 R = iso(0.0135);
  SUBCASE("no process noise leaves S = R") {
    const KalmanModel m = build_model(305.0, R, 0.0);
    CHECK(m.Q.norm() == 0.0);
    CHECK(m.P.norm() < 1e-15);
    CHECK((m.S - R).norm() < 1e-15);
  }
  SUBCASE("transition uses the frame interval") {
    const Mat4 F = transition_matrix(305.0);
    CHECK(F(0, 1) == doctest::Approx(1.0 / 305.0));
    CHECK(F(2, 3) == doctest::Approx(1.0 / 305.0));
    CHECK(F(0, 0) == 1.0);
    CHECK(F(1, 0) == 0.0);
    const Mat24 H = observation_matrix();
    CHECK(H(0, 0) == 1.0);
    CHECK(H(1, 2) == 1.0);
    CHECK(H.sum() == 2.0);
  }
  SUBCASE("Q scales with q squared") {
    const Mat4 a = process_noise(305.0, 3.0), b = process_noise(305.0, 6.0);
    CHECK((b - 4.0 * a).norm() < 1e-12 * b.norm());
  }
  SUBCASE("asymptotic covariance") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> lq(-3.0, 4.0), ls(-3.0, -1.0);
    for (int t = 0; t < 20; ++t) {
      const double q = std::pow(10.0, lq(rng));
      const double sx = std::pow(10.0, ls(rng)), sz = std::pow(10.0, ls(rng));
      Mat2 R2 = Mat2::Zero();
      R2(0, 0) = sx * sx;
      R2(1, 1) = sz * sz;
      const KalmanModel m = build_model(305.0, R2, q);
      CHECK(riccati_residual(m.F, m.H, m.Q, R2, m.P) < 1e-9);
      CHECK((m.P - m.P.transpose()).norm() <= 1e-12 * m.P.norm());
      CHECK(Eigen::SelfAdjointEigenSolver<Mat4>(m.P).eigenvalues().minCoeff() >= -1e-12 * m.P.norm());
    }
    const KalmanModel m = build_model(305.0, R, 50.0);
    CHECK((m.P.block<2, 2>(0, 0) - m.P.block<2, 2>(2, 2)).norm() < 1e-12 * m.P.norm());
    CHECK(m.P.block<2, 2>(0, 2).norm() < 1e-15);
  }
  SUBCASE("|S| increases with q") {
    double prev = 0.0;
    for (int i = 0; i < 50; ++i) {
      const double q = std::pow(10.0, -6.0 + 10.0 * i / 49.0);
      const double d = build_model(305.0, R, q).S_det;
      if (i > 0) CHECK(d > prev);
      prev = d;
    }
  }
}

TEST_CASE("pair probability") {
  const KalmanModel m = build_model(305.0, iso(0.02), 100.0);
  const double peak = 1.0 / (2.0 * kPi * std::sqrt(m.S_det));
  CHECK(pair_probability(m, 0.0, 0.0) == doctest::Approx(peak));
  // Mahalanobis distance 2 along x
  const double dx = 2.0 * std::sqrt(m.S(0, 0));
  CHECK(m.mahalanobis2(dx, 0.0) == doctest::Approx(4.0));
  CHECK(pair_probability(m, dx, 0.0) == doctest::Approx(peak * std::exp(-2.0)));
  CHECK(pair_probability(m, 0.01, 0.02) == doctest::Approx(pair_probability(m, -0.02, 0.01)));
  // integrates to one over +-6 sigma
  const double s = std::sqrt(m.S(0, 0)), h = s / 40.0;
  double total = 0.0;
  for (double x = -6 * s; x <= 6 * s; x += h)
    for (double z = -6 * s; z <= 6 * s; z += h) total += pair_probability(m, x, z) * h * h;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("pairing cost") {
  const KalmanModel m = build_model(305.0, iso(0.0135), 100.0);
  CHECK(pairing_cost(m, 0.0, 0.0, 2.0, 2.0, 0.5) == 0.0);
  CHECK(pairing_cost(m, 0.01, 0.0, 0.9, 1.0, 0.5) < pairing_cost(m, 0.01, 0.0, 0.5, 1.0, 0.5));
  CHECK(pairing_cost(m, 0.6, 0.0, 0.9, 1.0, 0.5) == kInf);
  CHECK(pairing_cost(m, 0.01, 0.0, 9.0, 10.0, 0.5) == doctest::Approx(pairing_cost(m, 0.01, 0.0, 0.9, 1.0, 0.5)));
  const double lim = dummy_limit(m);
  const double d3 = 3.0 * std::sqrt(m.S(0, 0));
  CHECK(pairing_cost(m, d3, 0.0, 0.5, 1.0, 1e9) == doctest::Approx(lim));
}

TEST_CASE("assignment") {
  SUBCASE("small cases") {
    Eigen::MatrixXd c(2, 2);
    c << 1, 10, 10, 1;
    CHECK(hungarian(c) == std::vector<int>{0, 1});
    CHECK(assign(c, 100.0) == std::vector<int>{0, 1});
    Eigen::MatrixXd one(1, 1);
    one << 3.0;
    CHECK(assign(one, 5.0) == std::vector<int>{0});
    CHECK(assign(one, 2.0) == std::vector<int>{-1});
  }
  SUBCASE("global beats greedy") {
    Eigen::MatrixXd c(2, 2);
    c << 1, 2, 2, 100;
    const auto a = assign(c, 1000.0);
    CHECK(a == std::vector<int>{1, 0});
    CHECK(assignment_cost(c, a, 1000.0) == 4.0);
  }
  SUBCASE("matches exhaustive search") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::uniform_int_distribution<int> sz(1, 6);
    for (int t = 0; t < 300; ++t) {
      const int n = sz(rng), m = sz(rng);
      Eigen::MatrixXd c(n, m);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) c(i, j) = u(rng) < 1.5 ? kInf : u(rng);
      const double limit = 1.0 + u(rng) * 0.6;
      const auto a = assign(c, limit);
      std::vector<bool> seen(m, false);
      for (int i = 0; i < n; ++i)
        if (a[i] >= 0) {
          CHECK_FALSE(seen[a[i]]);
          seen[a[i]] = true;
          CHECK(c(i, a[i]) <= limit);
        }
      CHECK(assignment_cost(c, a, limit) == doctest::Approx(brute_force(c, limit)));
    }
  }
  SUBCASE("square Hungarian against permutations") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int n = 1; n <= 6; ++n)
      for (int t = 0; t < 20; ++t) {
        Eigen::MatrixXd c(n, n);
        for (auto& v : c.reshaped()) v = u(rng);
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        double best = kInf;
        do {
          double s = 0.0;
          for (int i = 0; i < n; ++i) s += c(i, p[i]);
          best = std::min(best, s);
        } while (std::next_permutation(p.begin(), p.end()));
        const auto h = hungarian(c);
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += c(i, h[i]);
        CHECK(s == doctest::Approx(best));
      }
  }
}

TEST_CASE("fuzzy initialisation") {
  FuzzyOptions opt;
  SUBCASE("noiseless constant velocity") {
    const double vx = 80.0, vz = -30.0, dt = 1.0 / 305.0;
    const auto a = dets({{0.0, 20.0}, {2.0, 21.0}});
    const auto b = dets({{vx * dt, 20.0 + vz * dt}, {2.0 + vx * dt, 21.0 + vz * dt}});
    const auto c = dets({{2 * vx * dt, 20.0 + 2 * vz * dt}, {2.0 + 2 * vx * dt, 21.0 + 2 * vz * dt}});
    const auto init = fuzzy_init(a, b, c, {}, opt);
    REQUIRE(init.size() == 2);
    for (const auto& i : init) {
      CHECK(i.initialised);
      CHECK(std::abs(i.velocity.x() - vx) < 1e-6);
      CHECK(std::abs(i.velocity.y() - vz) < 1e-6);
    }
  }
  SUBCASE("visible in one frame only") {
    const auto init = fuzzy_init(dets({{0.0, 20.0}}), {}, {}, {}, opt);
    REQUIRE(init.size() == 1);
    CHECK_FALSE(init[0].initialised);
    CHECK(init[0].velocity.norm() == 0.0);
  }
  SUBCASE("window sizes span 0.3 to 1.2 of v_max / f") {
    CHECK(opt.window_mm(0) == doctest::Approx(0.3 * 150.0 / 305.0));
    CHECK(opt.window_mm(opt.windows - 1) == doctest::Approx(1.2 * 150.0 / 305.0));
  }
  SUBCASE("straight path variation over a flat MIP is zero") {
    const Grid g{20, 20, 0.0, 0.0, 0.1, 0.1};
    const ImageD flat(20, 20, 2.0);
    const MipView mip{&flat, &g};
    CHECK(path_variation(mip, 0.2, 0.2, 1.5, 1.2) == doctest::Approx(0.0));
  }
}

TEST_CASE("residual covariance estimate") {
  const double f = 305.0;
  auto make = [&](double sigma, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    std::vector<std::vector<Detection>> frames;
    std::vector<int> numbers;
    for (int k = 0; k < 30; ++k) {
      std::vector<Detection> d;
      for (int i = 0; i < 40; ++i) {
        const double x0 = (i % 8) * 1.5, z0 = 15.0 + (i / 8) * 1.5;
        const double vx = 40.0 + 5.0 * (i % 3), vz = 20.0;
        d.push_back({x0 + vx * k / f + n(rng), z0 + vz * k / f + n(rng), 1.0, i});
      }
      frames.push_back(d);
      numbers.push_back(k);
    }
    return std::pair{frames, numbers};
  };
  FuzzyOptions opt;
  SUBCASE("noiseless linear motion") {
    auto [fr, nu] = make(0.0, 1);
    const ShatEstimate e = estimate_shat(fr, nu, {}, opt);
    CHECK(e.sigma_e2 < 1e-20);
    CHECK(e.residuals > 0);
  }
  SUBCASE("white localization noise gives six sigma squared") {
    const double sigma = 0.005;
    auto [fr, nu] = make(sigma, 2);
    const ShatEstimate e = estimate_shat(fr, nu, {}, opt);
    CHECK(e.sigma_e2 == doctest::Approx(6.0 * sigma * sigma).epsilon(0.1));
    CHECK(e.S_hat(0, 1) == 0.0);
    CHECK(e.S_hat(0, 0) == e.sigma_e2);
  }
  SUBCASE("too few frames") {
    auto [fr, nu] = make(0.0, 3);
    fr.resize(12);
    nu.resize(12);
    CHECK_THROWS_AS(estimate_shat(fr, nu, {}, opt), Error);
  }
}

TEST_CASE("process noise search") {
  const Mat2 R = iso(0.0135);
  const double f = 305.0;
  const QSolution at_r = solve_q(R, R.determinant(), f);
  CHECK(at_r.q == 1e-6);
  const QSolution below = solve_q(R, 0.5 * R.determinant(), f);
  CHECK(below.clamped);
  const double target = build_model(f, R, 37.0).S_det;
  const QSolution s = solve_q(R, target, f);
  CHECK(s.S_det == doctest::Approx(target).epsilon(1e-2));
  CHECK(s.q == doctest::Approx(37.0).epsilon(1e-3));
}

TEST_CASE("trackable speed") {
  const auto a = max_trackable_speed(1.0, 305.0, 0.0);
  CHECK(a.v_max_mms == doctest::Approx(152.5));
  CHECK(a.band_half_width_mms == doctest::Approx(152.5));
  CHECK(max_trackable_speed(1.0, 305.0, 50.0).v_max_mms == doctest::Approx(202.5));
}

TEST_CASE("tracking a single bubble") {
  const double f = 305.0, vx = 60.0, vz = -20.0;
  std::vector<Localization> locs;
  for (int k = 0; k < 10; ++k)
    locs.push_back({k, snap_to_grid(1e3 * (0.2 + vx * k / f), 13.5), snap_to_grid(1e3 * (20.0 + vz * k / f), 13.5), 1.0});
  TrackerOptions opt;
  opt.q = 10.0;
  const TrackingResult r = track_sequence(locs, opt);
  REQUIRE(r.tracks.size() == 1);
  const Track& t = r.tracks[0];
  CHECK(t.size() == 10);
  for (std::size_t i = 1; i < t.points.size(); ++i) {
    CHECK(std::abs(t.points[i].vx_mms - vx) <= 0.0135 * f);
    CHECK(std::abs(t.points[i].vz_mms - vz) <= 0.0135 * f);
  }
  const LinkScore sc = score_links(r.tracks, locs, std::vector<int>(10, 0));
  CHECK(sc.true_links == 9);
  CHECK(sc.correct_links == 9);

  SUBCASE("an empty frame closes the track") {
    std::vector<Localization> gap = locs;
    gap.erase(gap.begin() + 5);
    const TrackingResult g = track_sequence(gap, opt);
    CHECK(g.tracks.size() == 2);
    for (const auto& tr : g.tracks)
      for (std::size_t i = 1; i < tr.points.size(); ++i) CHECK(tr.points[i].frame == tr.points[i - 1].frame + 1);
  }
  SUBCASE("intensity scale does not change the links") {
    std::vector<Localization> two = locs;
    for (auto l : locs) {
      l.x_um += 1000.0;
      l.intensity = 0.7;
      two.push_back(l);
    }
    std::vector<Localization> scaled = two;
    for (auto& l : scaled) l.intensity *= 40.0;
    const auto a = track_sequence(two, opt), b = track_sequence(scaled, opt);
    REQUIRE(a.tracks.size() == b.tracks.size());
    for (std::size_t i = 0; i < a.tracks.size(); ++i) {
      REQUIRE(a.tracks[i].size() == b.tracks[i].size());
      for (std::size_t j = 0; j < a.tracks[i].size(); ++j)
        CHECK(a.tracks[i].points[j].source == b.tracks[i].points[j].source);
    }
  }
}

TEST_CASE("tracks CSV round trip") {
  Track t;
  t.id = 3;
  t.points = {{0, 0.0135, 20.0, 0.0, 0.0, 1.5, 0}, {1, 0.027, 20.0135, 4.1175, 4.1175, 1.25, 1}};
  std::stringstream ss;
  write_tracks_csv(ss, {t});
  const auto back = read_tracks_csv(ss);
  REQUIRE(back.size() == 1);
  CHECK(back[0].id == 3);
  REQUIRE(back[0].size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(back[0].points[i].frame == t.points[i].frame);
    CHECK(back[0].points[i].x_mm == doctest::Approx(t.points[i].x_mm));
    CHECK(back[0].points[i].z_mm == doctest::Approx(t.points[i].z_mm));
    CHECK(back[0].points[i].vx_mms == doctest::Approx(t.points[i].vx_mms));
    CHECK(back[0].points[i].intensity == doctest::Approx(t.points[i].intensity));
  }
}
