#include "ulm/registration.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>

#include "ulm/filter.hpp"
#include "ulm/interp.hpp"

namespace ulm {

double DisplacementField::mean_distance(const DisplacementField& o) const {
  require(dr.same_shape(o.dr), "DisplacementField: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < dr.size(); ++i) s += std::hypot(dr[i] - o.dr[i], dc[i] - o.dc[i]);
  return dr.size() ? s / dr.size() : 0.0;
}

AffineParams AffineParams::from_matrix(double a_rr, double a_rc, double a_cr, double a_cc, double t_r, double t_c) {
  return {{a_rr - 1.0, a_rc, a_cr, a_cc - 1.0, t_r, t_c}};
}

DisplacementField AffineParams::field(int rows, int cols) const {
  auto u = DisplacementField::zero(rows, cols);
  const double cr = 0.5 * (rows - 1), cc = 0.5 * (cols - 1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double a = r - cr, b = c - cc;
      u.dr(r, c) = p[0] * a + p[1] * b + p[4];
      u.dc(r, c) = p[2] * a + p[3] * b + p[5];
    }
  return u;
}

DisplacementField RigidParams::field(int rows, int cols) const {
  auto u = DisplacementField::zero(rows, cols);
  const double cr = 0.5 * (rows - 1), cc = 0.5 * (cols - 1);
  const double cs = std::cos(theta), sn = std::sin(theta);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double a = r - cr, b = c - cc;
      u.dr(r, c) = cs * a - sn * b + cr + t_r - r;
      u.dc(r, c) = sn * a + cs * b + cc + t_c - c;
    }
  return u;
}

ImageD log_compress(const ImageD& env, double dr_db) {
  require(dr_db > 0.0, "log_compress: dynamic range must be positive");
  double peak = 0.0;
  for (double v : env) peak = std::max(peak, std::abs(v));
  ImageD out(env.rows(), env.cols());
  if (peak <= 0.0) return out;
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double a = std::abs(env[i]);
    const double db = a > 0.0 ? 20.0 * std::log10(a / peak) : -dr_db;
    out[i] = (std::max(db, -dr_db) + dr_db) / dr_db;
  }
  return out;
}

namespace {

// Parametric transforms evaluated at pyramid level with centre cl and
// translation scale s (translations are kept in full-resolution pixels).
struct AffineModel {
  static constexpr int n = 6;
  static void map(double a, double b, const double* th, double s, double cl_r, double cl_c, double& tr, double& tc,
                  double* jr, double* jc) {
    tr = (1.0 + th[0]) * a + th[1] * b + cl_r + s * th[4];
    tc = th[2] * a + (1.0 + th[3]) * b + cl_c + s * th[5];
    if (jr) {
      jr[0] = a, jr[1] = b, jr[2] = 0, jr[3] = 0, jr[4] = s, jr[5] = 0;
      jc[0] = 0, jc[1] = 0, jc[2] = a, jc[3] = b, jc[4] = 0, jc[5] = s;
    }
  }
};

struct RigidModel {
  static constexpr int n = 3;
  static void map(double a, double b, const double* th, double s, double cl_r, double cl_c, double& tr, double& tc,
                  double* jr, double* jc) {
    const double cs = std::cos(th[0]), sn = std::sin(th[0]);
    tr = cs * a - sn * b + cl_r + s * th[1];
    tc = sn * a + cs * b + cl_c + s * th[2];
    if (jr) {
      jr[0] = -sn * a - cs * b, jr[1] = s, jr[2] = 0;
      jc[0] = cs * a - sn * b, jc[1] = 0, jc[2] = s;
    }
  }
};

std::vector<ImageD> pyramid(const ImageD& img, int levels) {
  std::vector<ImageD> out{img};
  for (int l = 1; l < levels; ++l) {
    if (out.back().rows() < 32 || out.back().cols() < 32) break;
    out.push_back(downsample2(out.back()));
  }
  return out;
}

template <typename Model>
struct LevelProblem {
  const ImageD& fixed;
  SplineImage<double> moving;
  double s, cr, cc;  // translation scale and level centre

  static constexpr int n = Model::n;
  using Vec = Eigen::Matrix<double, n, 1>;
  using Mat = Eigen::Matrix<double, n, n>;

  // Mean squared residual over pixels mapping inside the moving image;
  // optionally accumulates the Gauss-Newton system.
  double evaluate(const Vec& th, Mat* H, Vec* g) const {
    double sum = 0.0;
    long used = 0;
    double jr[n]{}, jc[n]{};
    if (H) {
      H->setZero();
      g->setZero();
    }
    for (int r = 0; r < fixed.rows(); ++r)
      for (int c = 0; c < fixed.cols(); ++c) {
        double tr, tc;
        Model::map(r - cr, c - cc, th.data(), s, cr, cc, tr, tc, H ? jr : nullptr, jc);
        if (!moving.inside(tr, tc)) continue;
        double gr = 0.0, gc = 0.0;
        const double m = H ? moving.value(tr, tc, gr, gc) : moving.value(tr, tc);
        const double e = m - fixed(r, c);
        sum += e * e;
        ++used;
        if (H) {
          Vec j;
          for (int k = 0; k < n; ++k) j[k] = gr * jr[k] + gc * jc[k];
          H->noalias() += j * j.transpose();
          *g += e * j;
        }
      }
    if (used < static_cast<long>(fixed.size()) / 10) return INFINITY;
    if (H) {
      *H /= static_cast<double>(used);
      *g /= static_cast<double>(used);
    }
    return sum / used;
  }
};

template <typename Model>
Eigen::Matrix<double, Model::n, 1> run_parametric(const ImageD& fixed, const ImageD& moving,
                                                  Eigen::Matrix<double, Model::n, 1> th, const RegistrationOptions& opt,
                                                  RegistrationReport* report) {
  require(fixed.same_shape(moving), "register: image shapes differ");
  require(fixed.rows() >= 4 && fixed.cols() >= 4, "register: images too small");
  const auto fp = pyramid(fixed, std::max(1, opt.levels));
  const auto mp = pyramid(moving, std::max(1, opt.levels));
  const double cr0 = 0.5 * (fixed.rows() - 1), cc0 = 0.5 * (fixed.cols() - 1);
  RegistrationReport rep;
  rep.converged = true;
  using Problem = LevelProblem<Model>;
  for (int l = static_cast<int>(fp.size()) - 1; l >= 0; --l) {
    const double s = std::ldexp(1.0, -l);
    const Problem prob{fp[l], SplineImage<double>(mp[l]), s, cr0 * s, cc0 * s};
    typename Problem::Mat H;
    typename Problem::Vec g;
    double cost = prob.evaluate(th, &H, &g);
    if (l == static_cast<int>(fp.size()) - 1) rep.initial_cost = cost;
    if (!std::isfinite(cost)) fail(ErrorCode::Numerical, "register: initial transform maps outside the image");
    double lambda = 1e-3;
    bool level_converged = false;
    for (int it = 0; it < opt.max_iterations; ++it) {
      ++rep.iterations;
      typename Problem::Mat A = H;
      for (int k = 0; k < Problem::n; ++k) A(k, k) += lambda * std::max(H(k, k), 1e-12);
      const typename Problem::Vec step = A.ldlt().solve(-g);
      const typename Problem::Vec trial = th + step;
      const double c2 = prob.evaluate(trial, nullptr, nullptr);
      if (c2 < cost) {
        const double rel = (cost - c2) / std::max(cost, 1e-300);
        th = trial;
        cost = prob.evaluate(th, &H, &g);
        lambda = std::max(lambda * 0.1, 1e-9);
        if (rel < opt.rel_tol) {
          level_converged = true;
          break;
        }
      } else {
        lambda *= 10.0;
        if (lambda > 1e8) {
          level_converged = true;  // no descent direction left
          break;
        }
      }
    }
    if (l == 0) {
      rep.final_cost = cost;
      rep.converged = level_converged;
    }
  }
  if (report) *report = rep;
  return th;
}

}  // namespace

AffineParams register_affine(const ImageD& fixed, const ImageD& moving, const AffineParams& init,
                             const RegistrationOptions& opt, RegistrationReport* report) {
  Eigen::Matrix<double, 6, 1> th;
  for (int k = 0; k < 6; ++k) th[k] = init.p[k];
  th = run_parametric<AffineModel>(fixed, moving, th, opt, report);
  AffineParams out;
  for (int k = 0; k < 6; ++k) out.p[k] = th[k];
  if (!(std::abs(out.det()) > 1e-6)) fail(ErrorCode::Numerical, "register_affine: singular linear part");
  return out;
}

RigidParams register_rigid(const ImageD& fixed, const ImageD& moving, const RigidParams& init,
                           const RegistrationOptions& opt, RegistrationReport* report) {
  Eigen::Vector3d th(init.theta, init.t_r, init.t_c);
  th = run_parametric<RigidModel>(fixed, moving, th, opt, report);
  return {th[0], th[1], th[2]};
}

// ---------------------------------------------------------------- B-spline FFD

BsplineGrid BsplineGrid::zero(int rows, int cols, double spacing) {
  require(spacing > 0.0, "BsplineGrid: spacing must be positive");
  require(rows > 0 && cols > 0, "BsplineGrid: empty image");
  BsplineGrid g;
  g.spacing = spacing;
  g.rows = rows;
  g.cols = cols;
  g.nodes_r = static_cast<int>(std::floor((rows - 1) / spacing)) + 4;
  g.nodes_c = static_cast<int>(std::floor((cols - 1) / spacing)) + 4;
  g.cr.assign(g.node_count(), 0.0);
  g.cc.assign(g.node_count(), 0.0);
  return g;
}

namespace {

struct Support {
  int kr, kc;  // first node index along each axis
  double wr[4], wc[4];
};

Support support_at(const BsplineGrid& g, double r, double c) {
  Support s;
  const double ur = r / g.spacing, uc = c / g.spacing;
  s.kr = std::clamp(static_cast<int>(std::floor(ur)), 0, g.nodes_r - 4);
  s.kc = std::clamp(static_cast<int>(std::floor(uc)), 0, g.nodes_c - 4);
  bspline_weights(ur - s.kr, s.wr);
  bspline_weights(uc - s.kc, s.wc);
  return s;
}

}  // namespace

void BsplineGrid::displacement(double r, double c, double& dr, double& dc) const {
  const Support s = support_at(*this, r, c);
  dr = dc = 0.0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      const std::size_t n = static_cast<std::size_t>(s.kr + a) * nodes_c + s.kc + b;
      const double w = s.wr[a] * s.wc[b];
      dr += w * cr[n];
      dc += w * cc[n];
    }
}

DisplacementField BsplineGrid::field() const {
  auto u = DisplacementField::zero(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) displacement(r, c, u.dr(r, c), u.dc(r, c));
  return u;
}

double BsplineGrid::max_control() const {
  double m = 0.0;
  for (std::size_t i = 0; i < cr.size(); ++i) m = std::max(m, std::hypot(cr[i], cc[i]));
  return m;
}

namespace {

class FfdProblem {
 public:
  FfdProblem(const ImageD& fixed, const SplineImage<double>& moving, const DisplacementField& base, BsplineGrid& grid)
      : fixed_(fixed), moving_(moving), base_(base), grid_(grid) {
    support_.reserve(fixed.size());
    for (int r = 0; r < fixed.rows(); ++r)
      for (int c = 0; c < fixed.cols(); ++c) support_.push_back(support_at(grid, r, c));
    dim_ = 2 * static_cast<int>(grid.node_count());
  }

  int dim() const { return dim_; }

  // Mean SSD plus alpha * |coefficients|^2.
  double evaluate(const std::vector<double>& cr, const std::vector<double>& cc, double alpha,
                  Eigen::SparseMatrix<double>* H, Eigen::VectorXd* g) {
    const int nc = grid_.nodes_c;
    double sum = 0.0;
    long used = 0;
    if (H) {
      blocks_.assign(grid_.node_count() * 49 * 3, 0.0);
      g->setZero(dim_);
    }
    std::size_t i = 0;
    for (int r = 0; r < fixed_.rows(); ++r)
      for (int c = 0; c < fixed_.cols(); ++c, ++i) {
        const Support& s = support_[i];
        double dr = 0.0, dc = 0.0;
        double w[16];
        int node[16];
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) {
            const int k = a * 4 + b;
            node[k] = (s.kr + a) * nc + s.kc + b;
            w[k] = s.wr[a] * s.wc[b];
            dr += w[k] * cr[node[k]];
            dc += w[k] * cc[node[k]];
          }
        const double tr = r + base_.dr(r, c) + dr, tc = c + base_.dc(r, c) + dc;
        if (!moving_.inside(tr, tc)) continue;
        double gr = 0.0, gc = 0.0;
        const double m = H ? moving_.value(tr, tc, gr, gc) : moving_.value(tr, tc);
        const double e = m - fixed_(r, c);
        sum += e * e;
        ++used;
        if (!H) continue;
        const double hrr = gr * gr, hrc = gr * gc, hcc = gc * gc;
        for (int k = 0; k < 16; ++k) {
          (*g)[2 * node[k]] += e * gr * w[k];
          (*g)[2 * node[k] + 1] += e * gc * w[k];
          const int ar = k / 4, ac = k % 4;
          for (int l = 0; l < 16; ++l) {
            const int off = (l / 4 - ar + 3) * 7 + (l % 4 - ac + 3);
            double* blk = &blocks_[(static_cast<std::size_t>(node[k]) * 49 + off) * 3];
            const double ww = w[k] * w[l];
            blk[0] += ww * hrr;
            blk[1] += ww * hrc;
            blk[2] += ww * hcc;
          }
        }
      }
    if (used < static_cast<long>(fixed_.size()) / 10) return INFINITY;
    double reg = 0.0;
    for (std::size_t n = 0; n < cr.size(); ++n) reg += cr[n] * cr[n] + cc[n] * cc[n];
    if (H) {
      const double inv = 1.0 / used;
      *g *= inv;
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(grid_.node_count() * 49 * 4);
      const int nr = grid_.nodes_r;
      for (int n = 0; n < static_cast<int>(grid_.node_count()); ++n) {
        const int rn = n / nc, cn = n % nc;
        for (int off = 0; off < 49; ++off) {
          const int r2 = rn + off / 7 - 3, c2 = cn + off % 7 - 3;
          if (r2 < 0 || c2 < 0 || r2 >= nr || c2 >= nc) continue;
          const double* blk = &blocks_[(static_cast<std::size_t>(n) * 49 + off) * 3];
          if (blk[0] == 0.0 && blk[1] == 0.0 && blk[2] == 0.0) continue;
          const int m = r2 * nc + c2;
          trip.emplace_back(2 * n, 2 * m, blk[0] * inv);
          trip.emplace_back(2 * n, 2 * m + 1, blk[1] * inv);
          trip.emplace_back(2 * n + 1, 2 * m, blk[1] * inv);
          trip.emplace_back(2 * n + 1, 2 * m + 1, blk[2] * inv);
        }
      }
      H->resize(dim_, dim_);
      H->setFromTriplets(trip.begin(), trip.end());
      for (std::size_t n = 0; n < cr.size(); ++n) {
        (*g)[2 * n] += alpha * cr[n];
        (*g)[2 * n + 1] += alpha * cc[n];
      }
    }
    return sum / used + alpha * reg;
  }

 private:
  const ImageD& fixed_;
  const SplineImage<double>& moving_;
  const DisplacementField& base_;
  BsplineGrid& grid_;
  std::vector<Support> support_;
  std::vector<double> blocks_;
  int dim_ = 0;
};

}  // namespace

DisplacementField register_bspline(const ImageD& fixed, const ImageD& moving, const DisplacementField& base,
                                   const BsplineOptions& opt, std::vector<BsplineGrid>* grids,
                                   RegistrationReport* report) {
  require(fixed.same_shape(moving), "register_bspline: image shapes differ");
  require(base.dr.same_shape(fixed) && base.dc.same_shape(fixed), "register_bspline: base field shape mismatch");
  require(!opt.spacings.empty(), "register_bspline: no spacing levels");
  const SplineImage<double> ms(moving);
  DisplacementField total = base;
  RegistrationReport rep;
  rep.converged = true;
  if (grids) grids->clear();
  for (std::size_t lev = 0; lev < opt.spacings.size(); ++lev) {
    BsplineGrid grid = BsplineGrid::zero(fixed.rows(), fixed.cols(), opt.spacings[lev]);
    FfdProblem prob(fixed, ms, total, grid);
    Eigen::SparseMatrix<double> H;
    Eigen::VectorXd g;
    std::vector<double> cr = grid.cr, cc = grid.cc;
    // Coefficient regularisation keeps control points without image support at zero.
    double alpha = 0.0;
    double cost = prob.evaluate(cr, cc, alpha, &H, &g);
    if (!std::isfinite(cost)) fail(ErrorCode::Numerical, "register_bspline: base transform maps outside the image");
    if (lev == 0) rep.initial_cost = cost;
    double mean_diag = 0.0;
    for (int k = 0; k < H.rows(); ++k) mean_diag += H.coeff(k, k);
    alpha = 1e-3 * mean_diag / std::max<long>(1, H.rows());
    if (alpha <= 0.0) alpha = 1e-12;
    cost = prob.evaluate(cr, cc, alpha, &H, &g);
    double lambda = 1e-3;
    bool level_converged = false;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    for (int it = 0; it < opt.max_iterations; ++it) {
      ++rep.iterations;
      Eigen::SparseMatrix<double> A = H;
      for (int k = 0; k < A.rows(); ++k) A.coeffRef(k, k) += alpha + lambda * (H.coeff(k, k) + alpha);
      solver.compute(A);
      if (solver.info() != Eigen::Success) fail(ErrorCode::Numerical, "register_bspline: normal equations singular");
      const Eigen::VectorXd step = solver.solve(-g);
      std::vector<double> tr(cr), tc(cc);
      for (std::size_t n = 0; n < tr.size(); ++n) {
        tr[n] += step[2 * n];
        tc[n] += step[2 * n + 1];
      }
      const double c2 = prob.evaluate(tr, tc, alpha, nullptr, nullptr);
      if (c2 < cost) {
        const double rel = (cost - c2) / std::max(cost, 1e-300);
        cr = std::move(tr);
        cc = std::move(tc);
        cost = prob.evaluate(cr, cc, alpha, &H, &g);
        lambda = std::max(lambda * 0.1, 1e-9);
        if (rel < opt.rel_tol) {
          level_converged = true;
          break;
        }
      } else {
        lambda *= 10.0;
        if (lambda > 1e8) {
          level_converged = true;
          break;
        }
      }
    }
    grid.cr = std::move(cr);
    grid.cc = std::move(cc);
    const DisplacementField d = grid.field();
    for (std::size_t i = 0; i < total.dr.size(); ++i) {
      total.dr[i] += d.dr[i];
      total.dc[i] += d.dc[i];
    }
    if (grids) grids->push_back(std::move(grid));
    rep.final_cost = cost;
    rep.converged = rep.converged && level_converged;
  }
  if (report) *report = rep;
  return total;
}

ImageD apply_motion(const ImageD& frame, const DisplacementField& u, Exec exec) {
  require(u.dr.same_shape(frame) && u.dc.same_shape(frame), "apply_motion: field shape mismatch");
  for (std::size_t i = 0; i < u.dr.size(); ++i)
    require(std::isfinite(u.dr[i]) && std::isfinite(u.dc[i]), "apply_motion: non-finite displacement");
  const SplineImage<double> sp(frame);
  return exec == Exec::Parallel ? kernels::parallel::warp(sp, u.dr, u.dc) : kernels::serial::warp(sp, u.dr, u.dc);
}

double min_jacobian(const DisplacementField& u) {
  const int rows = u.rows(), cols = u.cols();
  if (rows < 2 || cols < 2) return 1.0;
  auto d = [](const ImageD& f, int r, int c, bool along_rows) {
    const int n = along_rows ? f.rows() : f.cols();
    const int i = along_rows ? r : c;
    const int lo = std::max(0, i - 1), hi = std::min(n - 1, i + 1);
    const double a = along_rows ? f(lo, c) : f(r, lo);
    const double b = along_rows ? f(hi, c) : f(r, hi);
    return (b - a) / (hi - lo);
  };
  double m = INFINITY;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double j = (1.0 + d(u.dr, r, c, true)) * (1.0 + d(u.dc, r, c, false)) -
                       d(u.dr, r, c, false) * d(u.dc, r, c, true);
      m = std::min(m, j);
    }
  return m;
}

}  // namespace ulm
