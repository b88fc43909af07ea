#include "branchlab/eigensolve.hpp"

#include "branchlab/error.hpp"
#include "branchlab/linalg.hpp"

#include <lapacke.h>

#include <cmath>
#include <limits>

namespace branchlab {

namespace {

Eigen::VectorXd weighted_residuals(const Eigen::MatrixXd& matrix, const Eigen::VectorXd& values,
                                   const Eigen::MatrixXd& vectors, double weight) {
    Eigen::VectorXd out(values.size());
    const Eigen::MatrixXd applied = matrix * vectors;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        out(i) = weighted_norm(applied.col(i) - values(i) * vectors.col(i), weight);
    }
    return out;
}

}  // namespace

SpectrumSnapshot eigendecompose(const Eigen::MatrixXd& matrix, std::size_t k, double t_tag,
                                double weight) {
    const Eigen::Index n = matrix.rows();
    if (matrix.cols() != n || n == 0) throw PreconditionError("matrix must be square and nonempty");
    if (k < 1 || static_cast<Eigen::Index>(k) > n) {
        throw PreconditionError("requested " + std::to_string(k) + " eigenpairs of a " +
                                std::to_string(n) + "-dimensional matrix");
    }
    if (!(weight > 0.0)) throw PreconditionError("inner product weight must be positive");
    const double scale = std::max(1.0, matrix.cwiseAbs().maxCoeff());
    if (!std::isfinite(scale)) throw PreconditionError("matrix has non-finite entries");
    if (max_asymmetry(matrix) > 1e-10 * scale) {
        throw PreconditionError("matrix is not symmetric within 1e-10");
    }

    Eigen::MatrixXd work = matrix;  // dsyevr overwrites its input
    const auto k_int = static_cast<lapack_int>(k);
    const auto n_int = static_cast<lapack_int>(n);
    Eigen::VectorXd w(n);
    Eigen::MatrixXd z(n, static_cast<Eigen::Index>(k));
    std::vector<lapack_int> support(2 * static_cast<std::size_t>(k));
    lapack_int found = 0;
    const lapack_int info =
        LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', n_int, work.data(), n_int, 0.0, 0.0, 1,
                       k_int, 0.0, &found, w.data(), z.data(), n_int, support.data());
    if (info != 0 || found != k_int) {
        throw SolverError("dsyevr failed (info " + std::to_string(info) + ", found " +
                              std::to_string(found) + " of " + std::to_string(k) + ")",
                          std::numeric_limits<double>::infinity());
    }

    SpectrumSnapshot snap;
    snap.t = t_tag;
    snap.weight = weight;
    snap.eigenvalues = w.head(static_cast<Eigen::Index>(k));
    // Euclidean-unit columns become weighted-unit sections.
    snap.eigenvectors = z / std::sqrt(weight);
    snap.residuals = weighted_residuals(matrix, snap.eigenvalues, snap.eigenvectors, weight);

    double worst = 0.0;
    double worst_excess = 0.0;
    for (Eigen::Index i = 0; i < snap.residuals.size(); ++i) {
        const double excess = snap.residuals(i) / residual_tolerance(snap.eigenvalues(i));
        if (excess > worst_excess) {
            worst_excess = excess;
            worst = snap.residuals(i);
        }
    }
    if (!(worst_excess <= 1.0)) {
        throw SolverError("eigenpair residual " + std::to_string(worst) + " exceeds tolerance",
                          worst);
    }
    return snap;
}

SnapshotReport verify_snapshot(const SpectrumSnapshot& snapshot, const Eigen::MatrixXd& matrix) {
    const Eigen::Index n = snapshot.dimension();
    if (matrix.rows() != n || matrix.cols() != n) {
        throw PreconditionError("snapshot dimension " + std::to_string(n) +
                                " does not match matrix " + std::to_string(matrix.rows()) + "x" +
                                std::to_string(matrix.cols()));
    }
    if (snapshot.eigenvectors.cols() != snapshot.eigenvalues.size()) {
        throw PreconditionError("snapshot has mismatched eigenvalue and eigenvector counts");
    }
    SnapshotReport report;
    const double w = snapshot.weight;
    report.residuals = weighted_residuals(matrix, snapshot.eigenvalues, snapshot.eigenvectors, w);

    const Eigen::MatrixXd gram = w * snapshot.eigenvectors.transpose() * snapshot.eigenvectors;
    const auto k = gram.rows();
    report.gram_defect = (gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff();

    for (Eigen::Index i = 0; i < k; ++i) {
        const double lambda = snapshot.eigenvalues(i);
        report.max_residual_excess =
            std::max(report.max_residual_excess, report.residuals(i) / residual_tolerance(lambda));
        const double rq = weighted_quadratic_form(matrix, snapshot.eigenvectors.col(i), w);
        report.rayleigh_defect =
            std::max(report.rayleigh_defect, std::abs(rq - lambda) / (1.0 + std::abs(lambda)));
        if (i > 0 && snapshot.eigenvalues(i) < snapshot.eigenvalues(i - 1)) report.sorted = false;
    }

    if (!report.sorted) report.violations.emplace_back("eigenvalues not ascending");
    if (report.gram_defect > 1e-10) {
        report.violations.emplace_back("Gram defect " + std::to_string(report.gram_defect));
    }
    if (report.max_residual_excess > 1.0) {
        report.violations.emplace_back("residual exceeds 1e-8 (1 + |lambda|)");
    }
    if (report.rayleigh_defect > 1e-8) {
        report.violations.emplace_back("Rayleigh quotient mismatch");
    }
    return report;
}

}  // namespace branchlab
