#pragma once

#include <random>

#include "ulm/core.hpp"
#include "ulm/filter.hpp"

namespace testutil {

// smoothed white noise rescaled to [0, 1]
inline ulm::ImageD texture(int rows, int cols, unsigned seed, double sigma = 2.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ulm::ImageD img(rows, cols);
  for (auto& v : img) v = n(rng);
  img = ulm::gaussian_blur(img, sigma, ulm::Exec::Serial);
  double lo = 1e300, hi = -1e300;
  for (double v : img) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (auto& v : img) v = (v - lo) / (hi - lo);
  return img;
}

}  // namespace testutil
