#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "ulm/filter.hpp"
#include "ulm/quantify.hpp"

using namespace ulm;

namespace {

int count(const Mask& m) {
  int n = 0;
  for (auto v : m) n += v != 0;
  return n;
}

int neighbours(const Mask& m, int r, int c) {
  int n = 0;
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc)
      if ((dr || dc) && m.contains(r + dr, c + dc) && m(r + dr, c + dc)) ++n;
  return n;
}

// foreground within half_width of the segment a -> b (pixel units)
void paint_band(Mask& m, double ar, double ac, double br, double bc, double half_width) {
  const double lr = br - ar, lc = bc - ac, len2 = lr * lr + lc * lc;
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) {
      const double t = std::clamp(((r - ar) * lr + (c - ac) * lc) / len2, 0.0, 1.0);
      if (std::hypot(r - ar - t * lr, c - ac - t * lc) <= half_width) m(r, c) = 1;
    }
}

double bin_mass(const Histogram& h, double lo) {
  for (std::size_t i = 0; i < h.mass.size(); ++i)
    if (std::abs(h.low[i] - lo) < 1e-9) return h.mass[i];
  return 0.0;
}

}  // namespace

TEST_CASE("skeleton") {
  SUBCASE("5 px bar thins to its middle row") {
    Mask m(15, 40);
    for (int r = 5; r < 10; ++r)
      for (int c = 5; c < 35; ++c) m(r, c) = 1;
    const Mask s = skeletonize(m);
    REQUIRE(count(s) > 20);
    for (int r = 0; r < 15; ++r)
      for (int c = 0; c < 40; ++c)
        if (s(r, c)) CHECK(r == 7);
  }
  SUBCASE("empty stays empty") { CHECK(count(skeletonize(Mask(10, 10))) == 0); }
  SUBCASE("Y junction has three branches") {
    Mask m(60, 60);
    paint_band(m, 30, 30, 5, 30, 2.5);
    paint_band(m, 30, 30, 50, 10, 2.5);
    paint_band(m, 30, 30, 50, 50, 2.5);
    const Mask s = skeletonize(m);
    std::vector<std::pair<int, int>> ends, junctions;
    for (int r = 0; r < 60; ++r)
      for (int c = 0; c < 60; ++c) {
        if (!s(r, c)) continue;
        const int n = neighbours(s, r, c);
        if (n == 1) ends.push_back({r, c});
        if (n >= 3) junctions.push_back({r, c});
      }
    CHECK(ends.size() == 3);
    REQUIRE_FALSE(junctions.empty());
    for (auto [r, c] : junctions) {
      CHECK(std::abs(r - junctions[0].first) <= 2);
      CHECK(std::abs(c - junctions[0].second) <= 2);
    }
  }
}

TEST_CASE("Euclidean distance transform") {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution fg(0.8);
  Mask m(23, 31);
  for (auto& v : m) v = fg(rng);
  const ImageD d = distance_transform(m);
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) {
      if (!m(r, c)) {
        CHECK(d(r, c) == 0.0);
        continue;
      }
      // outside the raster counts as background
      double best = std::min({r + 1.0, c + 1.0, double(m.rows() - r), double(m.cols() - c)});
      for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j)
          if (!m(i, j)) best = std::min(best, std::hypot(i - r, j - c));
      CHECK(d(r, c) == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("Otsu threshold") {
  ImageD img(20, 20);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> lo(1.0, 0.1), hi(5.0, 0.3);
  for (int i = 0; i < 400; ++i) img[i] = i % 3 ? lo(rng) : hi(rng);
  const double t = otsu_threshold(img);
  // anywhere in the gap between the modes
  CHECK(t > 1.0);
  CHECK(t < 5.0);
  const Mask b = binarize(img, t);
  for (int i = 0; i < 400; ++i) CHECK(static_cast<bool>(b[i]) == (i % 3 == 0));
}

TEST_CASE("diameter distribution") {
  const double pitch = 13.5;
  auto vessel = [&](double width_um, double angle_deg) {
    Mask m(160, 160);
    const double a = angle_deg * kPi / 180.0, half_len = 55.0;
    paint_band(m, 80 - half_len * std::sin(a), 80 - half_len * std::cos(a), 80 + half_len * std::sin(a),
               80 + half_len * std::cos(a), 0.5 * width_um / pitch);
    return m;
  };
  SUBCASE("300 um vessel") {
    const Mask b = vessel(300.0, 0.0);
    const Histogram h = diameter_distribution(skeletonize(b), b, pitch);
    CHECK(h.total() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(bin_mass(h, 250.0) + bin_mass(h, 300.0) + bin_mass(h, 350.0) >= 0.9);
    CHECK(h.low.front() == 0.0);
    CHECK(h.high.front() == 50.0);
  }
  SUBCASE("wider than the cap") {
    Mask b(260, 260);
    paint_band(b, 130, 30, 130, 230, 0.5 * 2000.0 / pitch);
    const Histogram h = diameter_distribution(skeletonize(b), b, pitch);
    double cap = 0.0;
    for (std::size_t i = 0; i < h.mass.size(); ++i)
      if (h.low[i] >= 1500.0) cap += h.mass[i];
    CHECK(cap == doctest::Approx(1.0));
  }
  SUBCASE("length weighting") {
    Mask b(200, 200);
    paint_band(b, 50, 30, 50, 170, 0.5 * 200.0 / pitch);
    paint_band(b, 140, 30, 140, 170, 0.5 * 400.0 / pitch);
    const Histogram h = diameter_distribution(skeletonize(b), b, pitch);
    double small = 0.0, large = 0.0;
    for (std::size_t i = 0; i < h.mass.size(); ++i) {
      if (h.low[i] >= 150.0 && h.low[i] < 250.0) small += h.mass[i];
      if (h.low[i] >= 350.0 && h.low[i] < 450.0) large += h.mass[i];
    }
    CHECK(small == doctest::Approx(0.5).epsilon(0.1));
    CHECK(large == doctest::Approx(0.5).epsilon(0.1));
  }
  SUBCASE("rotation within a pixel") {
    std::vector<double> med;
    for (double ang : {0.0, 45.0, 90.0}) {
      const Mask b = vessel(300.0, ang);
      const Mask s = skeletonize(b);
      const ImageD d = distance_transform(b);
      std::vector<double> v;
      for (int r = 0; r < 160; ++r)
        for (int c = 0; c < 160; ++c)
          if (s(r, c) && std::hypot(r - 80, c - 80) < 40) v.push_back(2.0 * (d(r, c) - 0.5) * pitch);
      med.push_back(median(v));
    }
    for (double m : med) CHECK(std::abs(m - 300.0) <= pitch);
  }
  SUBCASE("empty centerline") { CHECK_THROWS_AS(diameter_distribution(Mask(5, 5), Mask(5, 5), pitch), Error); }
}

TEST_CASE("speed distribution") {
  SUBCASE("uniform map is degenerate") {
    ImageD s(30, 30, std::nan(""));
    for (int r = 10; r < 20; ++r)
      for (int c = 0; c < 30; ++c) s(r, c) = 50.0;
    const SpeedDistribution d = speed_distribution(s);
    CHECK(d.fit.degenerate);
    int occupied = 0;
    for (double m : d.histogram.mass) occupied += m > 0.0;
    CHECK(occupied == 1);
    CHECK(d.histogram.total() == doctest::Approx(1.0));
  }
  SUBCASE("log-normal recovery") {
    std::mt19937_64 rng(3);
    std::lognormal_distribution<double> ln(std::log(50.0), 0.4);
    ImageD s(100, 100);
    for (auto& v : s) v = ln(rng);
    const SpeedDistribution d = speed_distribution(s);
    CHECK(d.fit.samples == 10000);
    CHECK(d.fit.mu == doctest::Approx(std::log(50.0)).epsilon(0.05));
    CHECK(d.fit.sigma == doctest::Approx(0.4).epsilon(0.05));
    CHECK(d.histogram.total() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(d.histogram.high[0] - d.histogram.low[0] == doctest::Approx(5.0));
    // refit on samples drawn from the fit
    std::lognormal_distribution<double> again(d.fit.mu, d.fit.sigma);
    std::vector<double> v(10000);
    for (auto& x : v) x = again(rng);
    const LogNormalFit f2 = fit_lognormal(v);
    CHECK(std::abs(f2.mu - d.fit.mu) < 4.0 * d.fit.sigma / 100.0);
    CHECK(std::abs(f2.sigma - d.fit.sigma) < 4.0 * d.fit.sigma / std::sqrt(2.0 * 10000));
  }
  SUBCASE("all-zero map") { CHECK_THROWS_AS(speed_distribution(ImageD(10, 10)), Error); }
  SUBCASE("mean and std of the fit") {
    const LogNormalFit f = fit_lognormal({10.0, 20.0, 40.0});
    CHECK(f.mu == doctest::Approx(std::log(20.0)));
    CHECK(f.mean == doctest::Approx(std::exp(f.mu + 0.5 * f.sigma * f.sigma)));
    CHECK(f.std == doctest::Approx(f.mean * std::sqrt(std::exp(f.sigma * f.sigma) - 1.0)));
  }
}

TEST_CASE("mean and std formatting") {
  CHECK(format_mean_std(54.3, 23.9) == "54.3 ± 23.9 mm/s");
  CHECK(format_mean_std(52.66, 24.34) == "52.7 ± 24.3 mm/s");
  CHECK(format_mean_std(300.0, 12.0, "um") == "300.0 ± 12.0 um");
}

TEST_CASE("cross-section profiles") {
  const Grid g{100, 100, 0.0, 10.0, 0.0135, 0.0135};
  SUBCASE("flat profile has no peaks") {
    const Profile p = cross_section(ImageD(100, 100, 1.0), g, {0.6, 10.1}, {0.6, 11.2});
    CHECK(p.peaks.empty());
  }
  SUBCASE("single Gaussian ridge") {
    ImageD img(100, 100);
    const double sigma_px = 5.0;
    for (int r = 0; r < 100; ++r)
      for (int c = 0; c < 100; ++c) img(r, c) = std::exp(-0.5 * std::pow((r - 50.0) / sigma_px, 2));
    const Profile p = cross_section(img, g, {0.6, 10.1}, {0.6, 11.2});
    REQUIRE(p.peaks.size() == 1);
    const double step = 0.5 * 13.5;
    CHECK(std::abs(p.peaks[0].fwhm_um - sigma_to_fwhm(sigma_px) * 13.5) <= step);
    CHECK(std::abs(p.peaks[0].position_um - (50 * 13.5 - 100.0)) <= step);  // segment starts 100 um below z0
    CHECK(*std::max_element(p.value.begin(), p.value.end()) == doctest::Approx(1.0));
  }
  SUBCASE("two ridges 320 um apart") {
    ImageD img(100, 100);
    const double sigma_px = fwhm_to_sigma(160.4 / 13.5);
    const double r1 = 50.0 - 160.0 / 13.5, r2 = 50.0 + 160.0 / 13.5;
    for (int r = 0; r < 100; ++r)
      for (int c = 0; c < 100; ++c)
        img(r, c) = std::exp(-0.5 * std::pow((r - r1) / sigma_px, 2)) + std::exp(-0.5 * std::pow((r - r2) / sigma_px, 2));
    const Profile p = cross_section(img, g, {0.6, 10.1}, {0.6, 11.2});
    REQUIRE(p.separations_um.size() == 1);
    CHECK(std::abs(p.separations_um[0] - 320.0) <= 13.5);
    REQUIRE(p.troughs.size() == 1);
    CHECK(p.troughs[0] < 0.5);
  }
  SUBCASE("segment outside the raster") {
    CHECK_THROWS_AS(cross_section(ImageD(100, 100, 1.0), g, {-1.0, 10.1}, {0.6, 11.2}), Error);
  }
}
