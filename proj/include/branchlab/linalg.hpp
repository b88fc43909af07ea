#pragma once

#include <Eigen/Dense>

namespace branchlab {

// Discrete L2 products carry a quadrature weight: <u, w> = weight * u^T w.

inline double weighted_dot(const Eigen::VectorXd& u, const Eigen::VectorXd& w, double weight) {
    return weight * u.dot(w);
}

inline double weighted_norm(const Eigen::VectorXd& u, double weight) {
    return std::sqrt(weight * u.squaredNorm());
}

/// <B u, u> in the weighted product.
inline double weighted_quadratic_form(const Eigen::MatrixXd& b, const Eigen::VectorXd& u,
                                      double weight) {
    return weight * u.dot(b * u);
}

inline double max_asymmetry(const Eigen::MatrixXd& m) {
    return (m - m.transpose()).cwiseAbs().maxCoeff();
}

}  // namespace branchlab
