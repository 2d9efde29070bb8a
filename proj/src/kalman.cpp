#include "ulm/kalman.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ulm/core.hpp"

namespace ulm {

Vec4 KalmanModel::update(const Vec4& x_pred, double obs_x, double obs_z) const {
  const Eigen::Vector2d innov(obs_x - x_pred(0), obs_z - x_pred(2));
  return x_pred + K * innov;
}

double KalmanModel::mahalanobis2(double dx, double dz) const {
  const Eigen::Vector2d d(dx, dz);
  return d.dot(S_inv * d);
}

Mat4 transition_matrix(double f) {
  require(f > 0.0, "frame rate must be positive");
  Mat4 F = Mat4::Identity();
  F(0, 1) = 1.0 / f;
  F(2, 3) = 1.0 / f;
  return F;
}

Mat24 observation_matrix() {
  Mat24 H = Mat24::Zero();
  H(0, 0) = 1.0;
  H(1, 2) = 1.0;
  return H;
}

Mat4 process_noise(double f, double q) {
  require(f > 0.0, "frame rate must be positive");
  Eigen::Matrix2d b;
  b << 1.0 / (3.0 * f * f * f), 1.0 / (2.0 * f * f), 1.0 / (2.0 * f * f), 1.0 / f;
  Mat4 Q = Mat4::Zero();
  Q.block<2, 2>(0, 0) = b * (q * q);
  Q.block<2, 2>(2, 2) = b * (q * q);
  return Q;
}

Mat4 riccati_rhs(const Mat4& F, const Mat24& H, const Mat4& Q, const Mat2& R, const Mat4& P) {
  const Mat2 S = H * P * H.transpose() + R;
  const Mat4 upd = P - P * H.transpose() * S.inverse() * H * P;
  return F * upd * F.transpose() + Q;
}

double riccati_residual(const Mat4& F, const Mat24& H, const Mat4& Q, const Mat2& R, const Mat4& P) {
  const double diff = (P - riccati_rhs(F, H, Q, R, P)).norm();
  const double n = P.norm();
  return n > 0.0 ? diff / n : diff;
}

Mat4 riccati_fixed_point(const Mat4& F, const Mat24& H, const Mat4& Q, const Mat2& R, double tol,
                         int max_iterations) {
  const Mat4 I = Mat4::Identity();
  // doubling on the dual control form with A = F^T, B = H^T
  Mat4 A = F.transpose();
  Mat4 G = H.transpose() * R.inverse() * H;
  Mat4 X = Q;
  for (int k = 0; k < 64; ++k) {
    const Mat4 W = (I + G * X).inverse();
    const Mat4 A1 = A * W * A;
    const Mat4 G1 = G + A * W * G * A.transpose();
    const Mat4 X1 = X + A.transpose() * X * W * A;
    const double change = (X1 - X).norm();
    const double scale = X1.norm();
    A = A1;
    G = 0.5 * (G1 + G1.transpose());
    X = 0.5 * (X1 + X1.transpose());
    if (!X.allFinite()) fail(ErrorCode::Numerical, "riccati: doubling diverged");
    if (change <= 1e-15 * scale) break;
  }
  for (int it = 0; it < max_iterations; ++it) {
    Mat4 next = riccati_rhs(F, H, Q, R, X);
    next = 0.5 * (next + next.transpose());
    const double change = (next - X).norm();
    const double scale = next.norm();
    X = next;
    if (!X.allFinite()) fail(ErrorCode::Numerical, "riccati: fixed-point iteration diverged");
    if (scale == 0.0 || change < tol * scale) return X;
  }
  fail(ErrorCode::Numerical, "riccati: maximum iterations reached");
}

KalmanModel build_model(double f, const Mat2& R, double q) {
  require(f > 0.0, "build_model: frame rate must be positive");
  require(q >= 0.0 && std::isfinite(q), "build_model: q must be non-negative");
  require(std::abs(R(0, 1) - R(1, 0)) <= 1e-12 * R.norm() && R(0, 0) > 0.0 && R.determinant() > 0.0,
          "build_model: R must be symmetric positive definite");
  KalmanModel m;
  m.f = f;
  m.q = q;
  m.F = transition_matrix(f);
  m.H = observation_matrix();
  m.Q = process_noise(f, q);
  m.R = R;
  m.P = q == 0.0 ? Mat4::Zero() : riccati_fixed_point(m.F, m.H, m.Q, R);
  m.S = m.H * m.P * m.H.transpose() + R;
  m.S_det = m.S.determinant();
  if (!(m.S_det > 0.0)) fail(ErrorCode::Numerical, "build_model: singular innovation covariance");
  m.S_inv = m.S.inverse();
  m.K = m.P * m.H.transpose() * m.S_inv;
  return m;
}

double pair_probability(const KalmanModel& m, double dx, double dz) {
  if (!(m.S_det > 0.0)) fail(ErrorCode::Numerical, "pair_probability: singular S");
  return std::exp(-0.5 * m.mahalanobis2(dx, dz)) / (2.0 * kPi * std::sqrt(m.S_det));
}

double pairing_cost(const KalmanModel& m, double dx, double dz, double ia, double ib, double gate_mm) {
  if (std::hypot(dx, dz) > gate_mm) return std::numeric_limits<double>::infinity();
  const double top = std::max(ia, ib);
  const double ratio = top > 0.0 ? std::abs(ia - ib) / top : 0.0;
  if (ratio == 0.0) return 0.0;
  // ratio / p written without forming p so far pairs do not underflow to 0/0
  return ratio * 2.0 * kPi * std::sqrt(m.S_det) * std::exp(0.5 * m.mahalanobis2(dx, dz));
}

double dummy_limit(const KalmanModel& m) { return 0.5 * 2.0 * kPi * std::sqrt(m.S_det) * std::exp(0.5 * 9.0); }

QSolution solve_q(const Mat2& R, double target_det, double f, double q_lo, double q_hi, double eps) {
  require(q_lo >= 0.0 && q_hi > q_lo, "solve_q: invalid bracket");
  if (eps <= 0.0) eps = 1e-6 * q_hi;
  QSolution s;
  const double det_lo = build_model(f, R, q_lo).S_det;
  const double det_hi = build_model(f, R, q_hi).S_det;
  if (target_det <= det_lo) {
    s.q = q_lo;
    s.S_det = det_lo;
    s.clamped = target_det < det_lo;
    return s;
  }
  if (target_det >= det_hi) {
    s.q = q_hi;
    s.S_det = det_hi;
    s.clamped = target_det > det_hi;
    return s;
  }
  double lo = q_lo, hi = q_hi;
  while (hi - lo > eps) {
    const double q = 0.5 * (lo + hi);
    if (build_model(f, R, q).S_det > target_det)
      hi = q;
    else
      lo = q;
    ++s.iterations;
  }
  s.q = 0.5 * (lo + hi);
  s.S_det = build_model(f, R, s.q).S_det;
  return s;
}

TrackabilityBound max_trackable_speed(double d_b_mm, double f, double v_p_mms) {
  require(d_b_mm > 0.0 && f > 0.0, "max_trackable_speed: d_b and f must be positive");
  TrackabilityBound b;
  b.band_half_width_mms = 0.5 * d_b_mm * f;
  b.v_max_mms = b.band_half_width_mms + v_p_mms;
  return b;
}

}  // namespace ulm
