#include "ulm/assignment.hpp"

#include <cmath>
#include <limits>

#include "ulm/core.hpp"

namespace ulm {

std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  require(cost.rows() == cost.cols(), "hungarian: matrix must be square");
  require(cost.allFinite(), "hungarian: entries must be finite");
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // shortest augmenting paths with row/column potentials, 1-based sentinel column 0
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> out(n, -1);
  for (int j = 1; j <= n; ++j) out[p[j] - 1] = j - 1;
  return out;
}

std::vector<int> assign(const Eigen::MatrixXd& cost, double limit) {
  require(std::isfinite(limit) && limit >= 0.0, "assign: limit must be finite and non-negative");
  const int m = static_cast<int>(cost.rows()), n = static_cast<int>(cost.cols());
  std::vector<int> out(m, -1);
  if (m == 0 || n == 0) return out;
  const double forbid = (m + n + 1.0) * (limit + 1.0) * 4.0;
  // [ C      | dummy rows ]
  // [ dummy  | 0          ]
  Eigen::MatrixXd big = Eigen::MatrixXd::Constant(m + n, m + n, forbid);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      if (std::isfinite(cost(i, j)) && cost(i, j) <= limit) big(i, j) = cost(i, j);
  for (int i = 0; i < m; ++i) big(i, n + i) = limit;
  for (int j = 0; j < n; ++j) big(m + j, j) = limit;
  big.bottomRightCorner(n, m).setZero();
  const auto match = hungarian(big);
  for (int i = 0; i < m; ++i)
    if (match[i] < n && big(i, match[i]) < forbid) out[i] = match[i];
  return out;
}

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& rows_to_cols, double limit) {
  const int n = static_cast<int>(cost.cols());
  std::vector<char> used(n, 0);
  double total = 0.0;
  for (std::size_t i = 0; i < rows_to_cols.size(); ++i) {
    const int j = rows_to_cols[i];
    if (j < 0) {
      total += limit;
    } else {
      total += cost(static_cast<int>(i), j);
      used[j] = 1;
    }
  }
  for (int j = 0; j < n; ++j)
    if (!used[j]) total += limit;
  return total;
}

}  // namespace ulm
