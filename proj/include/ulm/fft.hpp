#pragma once

#include <span>
#include <vector>

#include "ulm/core.hpp"

namespace ulm::fft {

/// Unnormalised forward DFT; inverse applies the 1/n factor.
std::vector<cdouble> forward(std::span<const cdouble> x);
std::vector<cdouble> inverse(std::span<const cdouble> x);

/// Full 2D forward DFT of a real image.
ImageC forward2d(const ImageD& img);

}  // namespace ulm::fft
