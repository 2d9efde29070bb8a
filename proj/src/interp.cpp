#include "ulm/interp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ulm {

namespace {

constexpr double kPole = -0.26794919243112270;  // sqrt(3) - 2

inline int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

template <typename T>
void bspline_prefilter(std::span<T> s) {
  const int n = static_cast<int>(s.size());
  if (n < 2) return;
  const double z = kPole;
  for (auto& v : s) v *= 6.0;

  // Exact mirror-symmetric causal initialisation.
  T sum = s[0];
  double zk = z;
  const double z2n = std::pow(z, 2 * n - 2);
  double zr = z2n / z;  // z^(2n-3)
  for (int k = 1; k < n - 1; ++k) {
    sum += (zk + zr) * s[k];
    zk *= z;
    zr /= z;
  }
  sum += zk * s[n - 1];
  s[0] = sum / (1.0 - z2n);
  for (int k = 1; k < n; ++k) s[k] += z * s[k - 1];

  s[n - 1] = (z / (z * z - 1.0)) * (s[n - 1] + z * s[n - 2]);
  for (int k = n - 2; k >= 0; --k) s[k] = z * (s[k + 1] - s[k]);
}

template void bspline_prefilter<double>(std::span<double>);
template void bspline_prefilter<cdouble>(std::span<cdouble>);

void bspline_weights(double t, double w[4]) {
  const double t2 = t * t, t3 = t2 * t, u = 1.0 - t;
  w[0] = u * u * u / 6.0;
  w[1] = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0;
  w[2] = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0;
  w[3] = t3 / 6.0;
}

void bspline_weight_derivs(double t, double dw[4]) {
  const double u = 1.0 - t;
  dw[0] = -0.5 * u * u;
  dw[1] = -2.0 * t + 1.5 * t * t;
  dw[2] = 0.5 + t - 1.5 * t * t;
  dw[3] = 0.5 * t * t;
}

double bspline3(double x) {
  x = std::abs(x);
  if (x < 1.0) return 2.0 / 3.0 - x * x + 0.5 * x * x * x;
  if (x < 2.0) {
    const double u = 2.0 - x;
    return u * u * u / 6.0;
  }
  return 0.0;
}

double bspline3_deriv(double x) {
  const double s = x < 0 ? -1.0 : 1.0;
  const double a = std::abs(x);
  if (a < 1.0) return s * (-2.0 * a + 1.5 * a * a);
  if (a < 2.0) return s * (-0.5 * (2.0 - a) * (2.0 - a));
  return 0.0;
}

template <typename T>
SplineImage<T>::SplineImage(const Image<T>& samples) : coef_(samples) {
  const int rows = coef_.rows(), cols = coef_.cols();
  for (int r = 0; r < rows; ++r) bspline_prefilter<T>(std::span<T>(&coef_(r, 0), cols));
  std::vector<T> col(rows);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) col[r] = coef_(r, c);
    bspline_prefilter<T>(std::span<T>(col));
    for (int r = 0; r < rows; ++r) coef_(r, c) = col[r];
  }
}

template <typename T>
T SplineImage<T>::value(double r, double c) const {
  const int rows = coef_.rows(), cols = coef_.cols();
  const double fr = std::floor(r), fc = std::floor(c);
  const int ir = static_cast<int>(fr), ic = static_cast<int>(fc);
  double wr[4], wc[4];
  bspline_weights(r - fr, wr);
  bspline_weights(c - fc, wc);
  T acc{};
  for (int i = 0; i < 4; ++i) {
    const int rr = mirror(ir - 1 + i, rows);
    T row{};
    for (int j = 0; j < 4; ++j) row += wc[j] * coef_(rr, mirror(ic - 1 + j, cols));
    acc += wr[i] * row;
  }
  return acc;
}

template <typename T>
T SplineImage<T>::value(double r, double c, T& d_dr, T& d_dc) const {
  const int rows = coef_.rows(), cols = coef_.cols();
  const double fr = std::floor(r), fc = std::floor(c);
  const int ir = static_cast<int>(fr), ic = static_cast<int>(fc);
  double wr[4], wc[4], dwr[4], dwc[4];
  bspline_weights(r - fr, wr);
  bspline_weights(c - fc, wc);
  bspline_weight_derivs(r - fr, dwr);
  bspline_weight_derivs(c - fc, dwc);
  T acc{}, ar{}, ac{};
  for (int i = 0; i < 4; ++i) {
    const int rr = mirror(ir - 1 + i, rows);
    T row{}, drow{};
    for (int j = 0; j < 4; ++j) {
      const T v = coef_(rr, mirror(ic - 1 + j, cols));
      row += wc[j] * v;
      drow += dwc[j] * v;
    }
    acc += wr[i] * row;
    ar += dwr[i] * row;
    ac += wr[i] * drow;
  }
  d_dr = ar;
  d_dc = ac;
  return acc;
}

template class SplineImage<double>;
template class SplineImage<cdouble>;

double bilinear(const ImageD& img, double r, double c) {
  if (!(r >= 0.0 && c >= 0.0 && r <= img.rows() - 1 && c <= img.cols() - 1)) return 0.0;
  const int r0 = std::min(static_cast<int>(r), img.rows() - 1);
  const int c0 = std::min(static_cast<int>(c), img.cols() - 1);
  const int r1 = std::min(r0 + 1, img.rows() - 1);
  const int c1 = std::min(c0 + 1, img.cols() - 1);
  const double tr = r - r0, tc = c - c0;
  return (1 - tr) * ((1 - tc) * img(r0, c0) + tc * img(r0, c1)) + tr * ((1 - tc) * img(r1, c0) + tc * img(r1, c1));
}

cdouble lanczos4(std::span<const cdouble> s, double x) {
  constexpr int a = 4;
  const int n = static_cast<int>(s.size());
  const double fx = std::floor(x);
  const int i0 = static_cast<int>(fx);
  const double t = x - fx;
  if (t == 0.0) return (i0 >= 0 && i0 < n) ? s[i0] : cdouble{};
  cdouble acc{};
  for (int k = -a + 1; k <= a; ++k) {
    const int i = i0 + k;
    if (i < 0 || i >= n) continue;
    const double d = t - k;
    const double pd = kPi * d;
    const double w = a * std::sin(pd) * std::sin(pd / a) / (pd * pd);
    acc += w * s[i];
  }
  return acc;
}

}  // namespace ulm
