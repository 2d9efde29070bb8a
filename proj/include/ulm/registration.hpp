#pragma once

// Intensity registration with an SSD metric, in pixel coordinates
// (row, col). A transform T maps fixed-image pixels to moving-image
// positions so that moving(T(p)) ~ fixed(p).

#include <array>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/kernels.hpp"

namespace ulm {

/// Dense displacement u(p) = T(p) - p in pixels.
struct DisplacementField {
  ImageD dr;
  ImageD dc;

  static DisplacementField zero(int rows, int cols) { return {ImageD(rows, cols), ImageD(rows, cols)}; }
  int rows() const { return dr.rows(); }
  int cols() const { return dr.cols(); }
  double mean_distance(const DisplacementField& o) const;
};

/// T(p) = (I + L)(p - c) + c + t, c the image centre.
/// p = [L_rr, L_rc, L_cr, L_cc, t_r, t_c].
struct AffineParams {
  std::array<double, 6> p{};

  static AffineParams identity() { return {}; }
  static AffineParams from_matrix(double a_rr, double a_rc, double a_cr, double a_cc, double t_r, double t_c);
  double det() const { return (1.0 + p[0]) * (1.0 + p[3]) - p[1] * p[2]; }
  DisplacementField field(int rows, int cols) const;
};

/// T(p) = R(theta)(p - c) + c + t.
struct RigidParams {
  double theta = 0.0;  // radians, row/col plane
  double t_r = 0.0;
  double t_c = 0.0;

  DisplacementField field(int rows, int cols) const;
};

struct RegistrationOptions {
  int levels = 3;
  int max_iterations = 200;
  double rel_tol = 1e-4;
};

struct RegistrationReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// 50 dB log compression rescaled to [0, 1] grey levels.
ImageD log_compress(const ImageD& envelope, double dynamic_range_db = 50.0);

AffineParams register_affine(const ImageD& fixed, const ImageD& moving, const AffineParams& init,
                             const RegistrationOptions& opt = {}, RegistrationReport* report = nullptr);

RigidParams register_rigid(const ImageD& fixed, const ImageD& moving, const RigidParams& init = {},
                           const RegistrationOptions& opt = {}, RegistrationReport* report = nullptr);

/// Cubic B-spline free-form deformation; control point i along an axis sits
/// at (i - 1) * spacing pixels.
struct BsplineGrid {
  double spacing = 16.0;
  int rows = 0, cols = 0;    // image shape
  int nodes_r = 0, nodes_c = 0;
  std::vector<double> cr, cc;  // control displacements (px), node-major

  static BsplineGrid zero(int rows, int cols, double spacing);
  std::size_t node_count() const { return static_cast<std::size_t>(nodes_r) * nodes_c; }
  void displacement(double r, double c, double& dr, double& dc) const;
  DisplacementField field() const;
  double max_control() const;
};

struct BsplineOptions {
  std::vector<double> spacings{16.0, 8.0};
  int max_iterations = 200;
  double rel_tol = 1e-4;
};

/// FFD on top of an initial transform: T(p) = p + base(p) + sum_levels d_l(p).
/// Returns the total displacement field; grids receives each level's FFD.
DisplacementField register_bspline(const ImageD& fixed, const ImageD& moving, const DisplacementField& base,
                                   const BsplineOptions& opt = {}, std::vector<BsplineGrid>* grids = nullptr,
                                   RegistrationReport* report = nullptr);

/// Backward warp: out(p) = frame(p + u(p)), bicubic spline, zero outside.
ImageD apply_motion(const ImageD& frame, const DisplacementField& u, Exec exec = Exec::Parallel);

/// Minimum Jacobian determinant of p -> p + u(p) (central differences).
double min_jacobian(const DisplacementField& u);

}  // namespace ulm
