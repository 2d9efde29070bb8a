#pragma once

// Data-parallel image kernels. Every kernel has an OpenMP implementation
// used by the pipeline and a straightforward serial reference kept for tests
// and the benchmark.

#include <span>

#include "ulm/core.hpp"
#include "ulm/interp.hpp"

namespace ulm {

enum class Exec { Serial, Parallel };

/// Caps OpenMP threads from ULM_THREADS if set; returns the active count.
int configure_threads_from_env();

namespace kernels {

namespace serial {
/// Direct zero-padded 2D correlation with a centred odd-sized kernel.
ImageD convolve2d(const ImageD& img, const ImageD& kernel);
ImageD ncc_map(const ImageD& img, const ImageD& templ);
ImageD warp(const SplineImage<double>& src, const ImageD& shift_rows, const ImageD& shift_cols);
}  // namespace serial

namespace parallel {
/// Zero-padded separable correlation: rows kernel applied along columns index,
/// then along rows. Both kernels odd-sized and centred.
ImageD separable_convolve(const ImageD& img, std::span<const double> k_rows, std::span<const double> k_cols);
ImageD convolve2d(const ImageD& img, const ImageD& kernel);
ImageD ncc_map(const ImageD& img, const ImageD& templ);
ImageD warp(const SplineImage<double>& src, const ImageD& shift_rows, const ImageD& shift_cols);
}  // namespace parallel

}  // namespace kernels
}  // namespace ulm
