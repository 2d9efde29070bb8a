#pragma once

// Global minimum-cost one-to-one matching with dummy nodes.

#include <vector>

#include <Eigen/Dense>

namespace ulm {

/// Minimum-cost perfect matching of a square matrix (all entries finite).
/// Returns the column assigned to each row.
std::vector<int> hungarian(const Eigen::MatrixXd& cost);

/// Rows and columns may stay unmatched at price `limit` each; entries above
/// the limit (or infinite) are never paired. Returns the column per row or -1.
std::vector<int> assign(const Eigen::MatrixXd& cost, double limit);

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& rows_to_cols, double limit);

}  // namespace ulm
