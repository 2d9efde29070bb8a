#pragma once

// Constant-velocity Kalman motion model with a frozen asymptotic covariance,
// the likelihood pairing cost, and the process-noise search.

#include <Eigen/Dense>

namespace ulm {

using Mat4 = Eigen::Matrix4d;
using Mat2 = Eigen::Matrix2d;
using Vec4 = Eigen::Vector4d;
using Mat24 = Eigen::Matrix<double, 2, 4>;
using Mat42 = Eigen::Matrix<double, 4, 2>;

/// State order [x, vx, z, vz] in mm and mm/s.
struct KalmanModel {
  double f = 0.0;
  double q = 0.0;
  Mat4 F = Mat4::Identity();
  Mat24 H = Mat24::Zero();
  Mat4 Q = Mat4::Zero();
  Mat2 R = Mat2::Identity();
  Mat4 P = Mat4::Zero();  // asymptotic predicted covariance
  Mat2 S = Mat2::Identity();
  Mat2 S_inv = Mat2::Identity();
  double S_det = 1.0;
  Mat42 K = Mat42::Zero();  // gain with P frozen

  Vec4 predict(const Vec4& x) const { return F * x; }
  Vec4 update(const Vec4& x_pred, double obs_x, double obs_z) const;
  double mahalanobis2(double dx, double dz) const;
};

Mat4 transition_matrix(double f);
Mat24 observation_matrix();
Mat4 process_noise(double f, double q);

/// Right-hand side of the asymptotic covariance equation evaluated at P.
Mat4 riccati_rhs(const Mat4& F, const Mat24& H, const Mat4& Q, const Mat2& R, const Mat4& P);
double riccati_residual(const Mat4& F, const Mat24& H, const Mat4& Q, const Mat2& R, const Mat4& P);

/// Doubling iteration followed by plain fixed-point sweeps until the relative
/// Frobenius change drops below tol.
Mat4 riccati_fixed_point(const Mat4& F, const Mat24& H, const Mat4& Q, const Mat2& R, double tol = 1e-12,
                         int max_iterations = 100000);

KalmanModel build_model(double f, const Mat2& R, double q);

/// Gaussian innovation density at obs - mu.
double pair_probability(const KalmanModel& m, double dx, double dz);

/// (|Ia - Ib| / max(Ia, Ib)) / p, +inf when the innovation exceeds gate_mm.
double pairing_cost(const KalmanModel& m, double dx, double dz, double ia, double ib, double gate_mm);

/// Cost at Mahalanobis distance 3 with intensity ratio 0.5.
double dummy_limit(const KalmanModel& m);

struct QSolution {
  double q = 0.0;
  double S_det = 0.0;
  bool clamped = false;
  int iterations = 0;
};

/// Bisection on q for |S(q)| = target_det.
QSolution solve_q(const Mat2& R, double target_det, double f, double q_lo = 1e-6, double q_hi = 1e4,
                  double eps = -1.0);

struct TrackabilityBound {
  double v_max_mms = 0.0;         // 0.5 d_b f + v_p
  double band_half_width_mms = 0.0;  // |v_m - v_p| < 0.5 d_b f
};

TrackabilityBound max_trackable_speed(double d_b_mm, double f, double v_p_mms);

}  // namespace ulm
