#include "ulm/moco.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ulm/filter.hpp"

namespace ulm {

CycleGating gate_cycles(const ImageSequence& bmode, double min_s, double max_s) {
  const int n = static_cast<int>(bmode.frames.size());
  require(n >= 2, "gate_cycles: need at least two frames");
  require(min_s > 0.0 && max_s >= min_s, "gate_cycles: invalid window bounds");
  CycleGating g;
  g.correlation.resize(n - 1);
  for (int i = 0; i + 1 < n; ++i) g.correlation[i] = ncc(bmode.frames[i], bmode.frames[i + 1]);
  const auto& t = g.correlation;
  const double mean = std::accumulate(t.begin(), t.end(), 0.0) / t.size();
  double var = 0.0;
  for (double v : t) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / t.size());
  const double thr = mean - 2.0 * sd;

  // Lowest pair of every contiguous run below the threshold.
  for (int i = 0; i < static_cast<int>(t.size());) {
    if (!(t[i] < thr)) {
      ++i;
      continue;
    }
    int best = i;
    while (i < static_cast<int>(t.size()) && t[i] < thr) {
      if (t[i] < t[best]) best = i;
      ++i;
    }
    g.systole_starts.push_back(best);
  }
  if (g.systole_starts.empty()) fail(ErrorCode::Numerical, "gate_cycles: no cycles found");

  const int max_len = static_cast<int>(std::floor(max_s * bmode.frame_rate + 1e-9));
  const int min_len = static_cast<int>(std::ceil(min_s * bmode.frame_rate - 1e-9));
  std::vector<int> bounds{-1};
  bounds.insert(bounds.end(), g.systole_starts.begin(), g.systole_starts.end());
  bounds.push_back(n);
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    // Frames strictly between two systole starts; pairs (i, i+1) inside.
    const int lo = bounds[s] + 1, hi = bounds[s + 1];
    int best_a = -1, best_len = 0;
    for (int i = lo; i + 1 < hi;) {
      if (!(t[i] >= mean)) {
        ++i;
        continue;
      }
      const int a = i;
      while (i + 1 < hi && t[i] >= mean) ++i;
      const int len = i - a + 1;  // frames a..i
      if (len > best_len) {
        best_len = len;
        best_a = a;
      }
    }
    if (best_a < 0 || best_len < min_len) continue;
    const int end = best_a + best_len;
    g.diastole_windows.push_back({end - std::min(best_len, max_len), end});
  }
  return g;
}

int svd_keep_count(int pixels, int frames, double keep_fraction) {
  require(pixels > 0 && frames > 0, "svd_keep_count: empty Casorati matrix");
  require(keep_fraction > 0.0 && keep_fraction <= 1.0, "svd_keep_count: fraction must lie in (0, 1]");
  // Guard against 0.05 * 20 evaluating to 1.0000000000000002.
  return static_cast<int>(std::ceil(keep_fraction * std::min(pixels, frames) - 1e-9));
}

std::vector<ImageD> svd_tissue(const std::vector<ImageD>& frames, double keep_fraction) {
  require(frames.size() >= 2, "svd_tissue: degenerate window (fewer than two frames)");
  const int px = static_cast<int>(frames[0].size());
  const int nf = static_cast<int>(frames.size());
  Eigen::MatrixXd X(px, nf);
  for (int k = 0; k < nf; ++k) {
    require(frames[k].same_shape(frames[0]), "svd_tissue: frame shapes differ");
    X.col(k) = Eigen::Map<const Eigen::VectorXd>(frames[k].data(), px);
  }
  const int keep = svd_keep_count(px, nf, keep_fraction);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::MatrixXd Y = svd.matrixU().leftCols(keep) * svd.singularValues().head(keep).asDiagonal() *
                            svd.matrixV().leftCols(keep).transpose();
  std::vector<ImageD> out(nf, ImageD(frames[0].rows(), frames[0].cols()));
  for (int k = 0; k < nf; ++k) Eigen::Map<Eigen::VectorXd>(out[k].data(), px) = Y.col(k);
  return out;
}

namespace {

// 8-tap Gaussian window at half-integer offsets, valid-region filtering.
ImageD window_filter(const ImageD& img) {
  constexpr int kTaps = 8;
  double w[kTaps], sum = 0.0;
  for (int i = 0; i < kTaps; ++i) {
    const double x = i - 3.5;
    w[i] = std::exp(-0.5 * x * x / (1.5 * 1.5));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  const int rows = img.rows() - kTaps + 1, cols = img.cols() - kTaps + 1;
  ImageD tmp(img.rows(), cols), out(rows, cols);
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < cols; ++c) {
      double a = 0.0;
      for (int i = 0; i < kTaps; ++i) a += w[i] * img(r, c + i);
      tmp(r, c) = a;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double a = 0.0;
      for (int i = 0; i < kTaps; ++i) a += w[i] * tmp(r + i, c);
      out(r, c) = a;
    }
  return out;
}

}  // namespace

double ssim(const ImageD& a, const ImageD& b) {
  require(a.same_shape(b), "ssim: shape mismatch");
  require(a.rows() >= 8 && a.cols() >= 8, "ssim: images smaller than the window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  ImageD aa(a.rows(), a.cols()), bb(a.rows(), a.cols()), ab(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const ImageD ma = window_filter(a), mb = window_filter(b);
  const ImageD saa = window_filter(aa), sbb = window_filter(bb), sab = window_filter(ab);
  double total = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
    total += (2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
  }
  return total / ma.size();
}

int select_reference(const std::vector<ImageD>& frames) {
  require(!frames.empty(), "select_reference: no frames");
  ImageD mean(frames[0].rows(), frames[0].cols());
  for (const auto& f : frames) {
    require(f.same_shape(mean), "select_reference: frame shapes differ");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += f[i];
  }
  for (auto& v : mean) v /= frames.size();
  int best = 0;
  double best_s = -INFINITY;
  for (int k = 0; k < static_cast<int>(frames.size()); ++k) {
    const double s = ssim(frames[k], mean);
    if (s > best_s) {
      best_s = s;
      best = k;
    }
  }
  return best;
}

MotionStage motion_stage_from(const std::string& s) {
  if (s == "intra") return MotionStage::Intra;
  if (s == "inter") return MotionStage::Inter;
  fail(ErrorCode::ConfigInvalid, "unknown motion stage '" + s + "'");
}

void validate_stage_order(std::span<const MotionStage> order) {
  bool inter_seen = false;
  for (auto s : order) {
    if (s == MotionStage::Inter) inter_seen = true;
    if (s == MotionStage::Intra && inter_seen)
      fail(ErrorCode::ConfigInvalid, "motion correction: intra-cycle registration must precede the inter-cycle rigid stage");
  }
}

namespace {

double bilinear_clamped(const ImageD& f, double r, double c) {
  r = std::clamp(r, 0.0, f.rows() - 1.0);
  c = std::clamp(c, 0.0, f.cols() - 1.0);
  const int r0 = std::min(static_cast<int>(r), f.rows() - 2 < 0 ? 0 : f.rows() - 2);
  const int c0 = std::min(static_cast<int>(c), f.cols() - 2 < 0 ? 0 : f.cols() - 2);
  const int r1 = std::min(r0 + 1, f.rows() - 1), c1 = std::min(c0 + 1, f.cols() - 1);
  const double fr = r - r0, fc = c - c0;
  return (1 - fr) * ((1 - fc) * f(r0, c0) + fc * f(r0, c1)) + fr * ((1 - fc) * f(r1, c0) + fc * f(r1, c1));
}

}  // namespace

DisplacementField compose(const DisplacementField& intra, const RigidParams& rigid) {
  const int rows = intra.rows(), cols = intra.cols();
  const DisplacementField rf = rigid.field(rows, cols);
  auto out = DisplacementField::zero(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double qr = r + rf.dr(r, c), qc = c + rf.dc(r, c);
      out.dr(r, c) = qr + bilinear_clamped(intra.dr, qr, qc) - r;
      out.dc(r, c) = qc + bilinear_clamped(intra.dc, qr, qc) - c;
    }
  return out;
}

MocoResult correct_motion(const ImageSequence& bmode, const ImageSequence& ceus, const MocoOptions& opt) {
  validate_stage_order(opt.order);
  require(bmode.frames.size() == ceus.frames.size(), "correct_motion: B-mode and CEUS frame counts differ");
  require(!bmode.frames.empty() && bmode.frames[0].same_shape(ceus.frames[0]),
          "correct_motion: B-mode and CEUS geometries differ");
  const int rows = bmode.frames[0].rows(), cols = bmode.frames[0].cols();
  MocoResult res;
  res.gating = gate_cycles(bmode, opt.gating_min_s, opt.gating_max_s);
  if (res.gating.diastole_windows.empty()) fail(ErrorCode::Numerical, "correct_motion: no usable diastole window");

  const bool intra_enabled = opt.intra && std::find(opt.order.begin(), opt.order.end(), MotionStage::Intra) != opt.order.end();
  const bool inter_enabled = opt.inter && std::find(opt.order.begin(), opt.order.end(), MotionStage::Inter) != opt.order.end();

  std::vector<std::vector<DisplacementField>> intra(res.gating.diastole_windows.size());
  std::vector<ImageD> cycle_avg;
  for (std::size_t w = 0; w < res.gating.diastole_windows.size(); ++w) {
    const auto [b, e] = res.gating.diastole_windows[w];
    const int len = e - b;
    intra[w].assign(len, DisplacementField::zero(rows, cols));
    if (intra_enabled && len >= 2) {
      std::vector<ImageD> win(bmode.frames.begin() + b, bmode.frames.begin() + e);
      win = svd_tissue(win, opt.svd_keep_fraction);
      for (auto& f : win) f = log_compress(f, opt.dynamic_range_db);
      const int ref = select_reference(win);
      // Warm start: walk outward from the reference frame in both directions.
      for (int dir : {1, -1}) {
        AffineParams prev = AffineParams::identity();
        for (int k = ref + dir; k >= 0 && k < len; k += dir) {
          prev = register_affine(win[ref], win[k], prev, opt.affine);
          DisplacementField u = prev.field(rows, cols);
          if (opt.bspline) u = register_bspline(win[ref], win[k], u, opt.ffd);
          intra[w][k] = std::move(u);
        }
      }
    }
    ImageD avg(rows, cols);
    for (int k = 0; k < len; ++k) {
      const ImageD f = apply_motion(ceus.frames[b + k], intra[w][k]);
      for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += f[i] / len;
    }
    cycle_avg.push_back(log_compress(avg, opt.dynamic_range_db));
  }

  res.cycle_rigid.assign(cycle_avg.size(), RigidParams{});
  if (inter_enabled)
    for (std::size_t w = 1; w < cycle_avg.size(); ++w)
      res.cycle_rigid[w] = register_rigid(cycle_avg[0], cycle_avg[w], {}, opt.rigid);

  res.corrected.grid = ceus.grid;
  res.corrected.frame_rate = ceus.frame_rate;
  res.corrected.kind = ceus.kind;
  for (std::size_t w = 0; w < res.gating.diastole_windows.size(); ++w) {
    const auto [b, e] = res.gating.diastole_windows[w];
    for (int k = 0; k < e - b; ++k) {
      DisplacementField u = compose(intra[w][k], res.cycle_rigid[w]);
      if (!(min_jacobian(u) > 0.0)) fail(ErrorCode::Numerical, "correct_motion: composed field folds over");
      res.corrected.frames.push_back(apply_motion(ceus.frames[b + k], u));
      res.corrected.frame_index.push_back(ceus.frame_index.empty() ? b + k : ceus.frame_index[b + k]);
      res.frames.push_back(b + k);
      res.window.push_back(static_cast<int>(w));
      res.fields.push_back(std::move(u));
    }
  }
  return res;
}

}  // namespace ulm
