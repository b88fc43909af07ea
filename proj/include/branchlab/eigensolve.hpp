#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace branchlab {

/// Lowest k eigenpairs of a symmetric matrix at one parameter value.
/// Eigenvectors are the columns of `eigenvectors`, orthonormal in the
/// product <u, w> = weight * u^T w.
struct SpectrumSnapshot {
    double t = 0.0;
    double weight = 1.0;
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;
    Eigen::VectorXd residuals;

    std::size_t count() const noexcept { return static_cast<std::size_t>(eigenvalues.size()); }
    Eigen::Index dimension() const noexcept { return eigenvectors.rows(); }
};

/// Residual bound every returned pair must meet: 1e-8 (1 + |lambda|).
inline double residual_tolerance(double lambda) { return 1e-8 * (1.0 + std::abs(lambda)); }

/// Lowest k eigenpairs via Householder tridiagonalization and LAPACK's
/// relatively robust representations (dsyevr). Deterministic for identical input.
///
/// Throws PreconditionError for asymmetric input or k outside [1, n],
/// SolverError when LAPACK fails or a residual exceeds residual_tolerance.
SpectrumSnapshot eigendecompose(const Eigen::MatrixXd& matrix, std::size_t k, double t_tag,
                                double weight = 1.0);

struct SnapshotReport {
    Eigen::VectorXd residuals;
    double max_residual_excess = 0.0;  ///< max of residual / residual_tolerance
    double gram_defect = 0.0;          ///< max |G - I| of the weighted Gram matrix
    double rayleigh_defect = 0.0;      ///< max |<M psi, psi> - lambda| / (1 + |lambda|)
    bool sorted = true;
    std::vector<std::string> violations;

    bool ok() const noexcept { return violations.empty(); }
};

/// Recomputes residuals, Gram and Rayleigh defects of `snapshot` against `matrix`.
SnapshotReport verify_snapshot(const SpectrumSnapshot& snapshot, const Eigen::MatrixXd& matrix);

}  // namespace branchlab
