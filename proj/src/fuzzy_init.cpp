#include "ulm/fuzzy_init.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ulm {

double FuzzyOptions::window_mm(int r) const {
  const double frac = windows == 1 ? window_hi : window_lo + (window_hi - window_lo) * r / (windows - 1);
  return frac * v_max_mms / frame_rate;
}

void FuzzyOptions::validate() const {
  if (!(v_max_mms > 0.0) || !(frame_rate > 0.0)) fail(ErrorCode::ConfigInvalid, "fuzzy: v_max and frame rate must be positive");
  if (windows < 1 || !(window_lo > 0.0) || window_hi < window_lo)
    fail(ErrorCode::ConfigInvalid, "fuzzy: invalid search windows");
  if (path_samples < 2 || histogram_bins < 1) fail(ErrorCode::ConfigInvalid, "fuzzy: invalid sampling options");
}

double MipView::at(double x_mm, double z_mm) const {
  const int r = std::clamp(static_cast<int>(std::lround(grid->row_of(z_mm))), 0, image->rows() - 1);
  const int c = std::clamp(static_cast<int>(std::lround(grid->col_of(x_mm))), 0, image->cols() - 1);
  return (*image)(r, c);
}

double path_variation(const MipView& mip, double ax, double az, double bx, double bz, int samples) {
  if (!mip) return 0.0;
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < samples; ++k) {
    const double t = static_cast<double>(k) / (samples - 1);
    const double v = mip.at(ax + t * (bx - ax), az + t * (bz - az));
    s += v;
    s2 += v * v;
  }
  const double mean = s / samples;
  if (!(mean > 0.0)) return 0.0;
  const double var = std::max(0.0, s2 / samples - mean * mean);
  return std::sqrt(var) / mean;
}

namespace {

struct Triple {
  int m, n, q;
  double reach;  // larger of the two step lengths
  double d, dI, sp;
};

}  // namespace

std::vector<std::vector<WindowPick>> fuzzy_picks(const std::vector<Detection>& first,
                                                 const std::vector<Detection>& second,
                                                 const std::vector<Detection>& third, const MipView& mip,
                                                 const FuzzyOptions& opt) {
  opt.validate();
  const int M = static_cast<int>(first.size());
  std::vector<std::vector<WindowPick>> out(M, std::vector<WindowPick>(opt.windows));
  if (M == 0 || second.empty() || third.empty()) return out;
  const double wmax = opt.window_mm(opt.windows - 1);

  std::vector<Triple> triples;
  for (int m = 0; m < M; ++m) {
    const auto& a = first[m];
    for (int n = 0; n < static_cast<int>(second.size()); ++n) {
      const auto& b = second[n];
      const double s1 = std::hypot(b.x_mm - a.x_mm, b.z_mm - a.z_mm);
      if (s1 > wmax) continue;
      const double sp = path_variation(mip, a.x_mm, a.z_mm, b.x_mm, b.z_mm, opt.path_samples);
      for (int q = 0; q < static_cast<int>(third.size()); ++q) {
        const auto& c = third[q];
        const double s2 = std::hypot(c.x_mm - b.x_mm, c.z_mm - b.z_mm);
        if (s2 > wmax) continue;
        const double ex = c.x_mm + a.x_mm - 2.0 * b.x_mm;
        const double ez = c.z_mm + a.z_mm - 2.0 * b.z_mm;
        triples.push_back({m, n, q, std::max(s1, s2), std::hypot(ex, ez),
                           std::abs(c.intensity + a.intensity - 2.0 * b.intensity), sp});
      }
    }
  }

#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < opt.windows; ++r) {
    const double w = opt.window_mm(r);
    std::vector<const Triple*> in;
    for (const auto& t : triples)
      if (t.reach <= w) in.push_back(&t);
    if (in.empty()) continue;

    // first principal component of the z-scored components; loadings taken
    // non-negative so the score grows with every cost
    Eigen::MatrixXd X(in.size(), 3);
    for (std::size_t i = 0; i < in.size(); ++i) X.row(i) << in[i]->d, in[i]->dI, in[i]->sp;
    const Eigen::RowVector3d mean = X.colwise().mean();
    X.rowwise() -= mean;
    for (int k = 0; k < 3; ++k) {
      const double sd = std::sqrt(X.col(k).squaredNorm() / static_cast<double>(in.size()));
      if (sd > 0.0)
        X.col(k) /= sd;
      else
        X.col(k).setZero();
    }
    Eigen::Vector3d pc(1.0, 1.0, 1.0);
    if (in.size() > 1) {
      const Eigen::Matrix3d C = X.transpose() * X / static_cast<double>(in.size());
      if (C.trace() > 0.0) {
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(C);
        pc = es.eigenvectors().col(2).cwiseAbs();
      }
    }
    const Eigen::VectorXd score = X * pc;

    std::vector<double> best(M, std::numeric_limits<double>::infinity());
    std::vector<int> arg(M, -1);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const int m = in[i]->m;
      if (score(i) < best[m]) {
        best[m] = score(i);
        arg[m] = static_cast<int>(i);
      }
    }
    for (int m = 0; m < M; ++m) {
      if (arg[m] < 0) continue;
      const Triple& t = *in[arg[m]];
      const auto &a = first[t.m], &b = second[t.n], &c = third[t.q];
      WindowPick& p = out[m][r];
      p.paired = true;
      p.n = t.n;
      p.q = t.q;
      p.velocity = Eigen::Vector2d(b.x_mm - a.x_mm, b.z_mm - a.z_mm) * opt.frame_rate;
      p.residual = Eigen::Vector2d(c.x_mm + a.x_mm - 2.0 * b.x_mm, c.z_mm + a.z_mm - 2.0 * b.z_mm);
      p.innovation = t.d;
    }
  }
  return out;
}

InnovationHistogram InnovationHistogram::build(const std::vector<double>& d, int bins) {
  InnovationHistogram h;
  if (d.empty() || bins < 1) return h;
  h.lo = *std::min_element(d.begin(), d.end());
  h.hi = *std::max_element(d.begin(), d.end());
  h.mass.assign(bins, 0.0);
  for (double v : d) {
    int b = h.hi > h.lo ? static_cast<int>((v - h.lo) / (h.hi - h.lo) * bins) : 0;
    h.mass[std::clamp(b, 0, bins - 1)] += 1.0;
  }
  for (auto& m : h.mass) m /= static_cast<double>(d.size());
  return h;
}

double InnovationHistogram::weight(double d) const {
  if (mass.empty()) return 1.0;
  const int bins = static_cast<int>(mass.size());
  if (!(hi > lo)) return mass[0];
  return mass[std::clamp(static_cast<int>((d - lo) / (hi - lo) * bins), 0, bins - 1)];
}

std::vector<FuzzyInit> fuzzy_combine(const std::vector<std::vector<WindowPick>>& picks,
                                     const InnovationHistogram& hist_in, const FuzzyOptions& opt) {
  InnovationHistogram hist = hist_in;
  if (hist.empty()) {
    std::vector<double> d;
    for (const auto& row : picks)
      for (const auto& p : row)
        if (p.paired) d.push_back(p.innovation);
    hist = InnovationHistogram::build(d, opt.histogram_bins);
  }
  std::vector<FuzzyInit> out(picks.size());
  for (std::size_t m = 0; m < picks.size(); ++m) {
    Eigen::Vector2d acc(0.0, 0.0);
    double wsum = 0.0;
    int paired = 0;
    for (const auto& p : picks[m]) {
      if (!p.paired) continue;
      ++paired;
      const double w = hist.weight(p.innovation);
      acc += w * p.velocity;
      wsum += w;
    }
    out[m].paired_windows = paired;
    if (paired >= opt.min_windows && wsum > 0.0) {
      out[m].velocity = acc / wsum;
      out[m].initialised = true;
    }
  }
  return out;
}

std::vector<FuzzyInit> fuzzy_init(const std::vector<Detection>& first, const std::vector<Detection>& second,
                                  const std::vector<Detection>& third, const MipView& mip, const FuzzyOptions& opt,
                                  const InnovationHistogram& hist) {
  return fuzzy_combine(fuzzy_picks(first, second, third, mip, opt), hist, opt);
}

ShatEstimate estimate_shat(const std::vector<std::vector<Detection>>& frames, const std::vector<int>& frame_numbers,
                           const MipView& mip, const FuzzyOptions& opt, int n_groups) {
  require(frames.size() == frame_numbers.size(), "estimate_shat: frame list and numbers differ in length");
  require(n_groups > 0, "estimate_shat: group count must be positive");
  std::vector<int> starts;
  for (std::size_t t = 0; t + 2 < frames.size();) {
    const bool consecutive = frame_numbers[t + 1] == frame_numbers[t] + 1 && frame_numbers[t + 2] == frame_numbers[t] + 2;
    if (consecutive && !frames[t].empty() && !frames[t + 1].empty() && !frames[t + 2].empty()) {
      starts.push_back(static_cast<int>(t));
      t += 3;
    } else {
      ++t;
    }
  }
  if (static_cast<int>(starts.size()) < n_groups)
    fail(ErrorCode::Numerical, "estimate_shat: insufficient frames for " + std::to_string(n_groups) + " groups");

  ShatEstimate est;
  std::vector<Eigen::Vector2d> res;
  std::vector<double> d;
  const int L = static_cast<int>(starts.size());
  for (int g = 0; g < n_groups; ++g) {
    const int t = starts[static_cast<std::size_t>(g) * L / n_groups];
    est.group_starts.push_back(t);
    for (const auto& row : fuzzy_picks(frames[t], frames[t + 1], frames[t + 2], mip, opt))
      for (const auto& p : row)
        if (p.paired) {
          res.push_back(p.residual);
          d.push_back(p.innovation);
        }
  }
  est.residuals = static_cast<int>(res.size());
  if (res.size() < 2) fail(ErrorCode::Numerical, "estimate_shat: too few paired residuals");
  Eigen::Vector2d mean(0.0, 0.0);
  for (const auto& e : res) mean += e;
  mean /= static_cast<double>(res.size());
  double ss = 0.0;
  for (const auto& e : res) ss += (e - mean).squaredNorm();
  est.sigma_e2 = ss / (2.0 * (static_cast<double>(res.size()) - 1.0));
  est.S_hat = Eigen::Matrix2d::Identity() * est.sigma_e2;
  est.histogram = InnovationHistogram::build(d, opt.histogram_bins);
  return est;
}

}  // namespace ulm
