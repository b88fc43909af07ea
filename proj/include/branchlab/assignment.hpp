#pragma once

#include <Eigen/Dense>

#include <vector>

namespace branchlab {

/// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
/// potentials, O(n^3)). Returns `row_to_col` with row i assigned to column
/// row_to_col[i]. Ties resolve deterministically toward lower column indices.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

}  // namespace branchlab
