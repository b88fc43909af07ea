#pragma once

#include "branchlab/eigensolve.hpp"
#include "branchlab/operators.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace branchlab {

/// Ascending parameter grid for the sweep; refinement inserts midpoints but never
/// produces a step shorter than `min_step`.
struct TGrid {
    std::vector<double> base;
    double min_step = 0.0;
};

/// `base_steps` equal intervals on [t_min, t_max]. The default minimum step is
/// 1e-4 (t_max - t_min).
TGrid make_tgrid(double t_min, double t_max, std::size_t base_steps,
                 std::optional<double> min_step = std::nullopt);

struct TrackOptions {
    std::size_t k = 6;           ///< reported branches
    double tau = 0.75;           ///< overlap threshold that triggers refinement
    double eps_deg = 1e-6;       ///< degenerate-cluster gap, relative to 1 + |lambda|
    std::size_t guard = 4;       ///< extra tracked pairs above the reported ones
};

/// Overlaps between two snapshots and the chosen relabeling a -> b.
struct OverlapReport {
    Eigen::MatrixXd overlaps;              ///< |<psi_i(a), psi_j(b)>|
    std::vector<int> assignment;           ///< column of b assigned to column i of a
    std::vector<double> assigned_overlap;  ///< subspace overlap used for each assignment
    double min_overlap = 1.0;              ///< over the quality rows
    std::vector<std::vector<int>> clusters_a;  ///< degenerate clusters (size > 1) of a
    std::vector<std::vector<int>> clusters_b;
    bool ambiguous = false;
};

/// Matrix of |<psi_i(a), psi_j(b)>| in the weighted product; assignment left empty.
OverlapReport overlap_matrix(const SpectrumSnapshot& a, const SpectrumSnapshot& b);

/// Optimal relabeling of `a`'s eigenpairs onto `b`'s.
///
/// Eigenvalues closer than eps_deg (1 + |lambda|) form clusters; scores between
/// clusters are subspace overlaps sqrt(||P_A P_B||_F^2 / min(|A|, |B|)), and the
/// assignment minimizes the summed -log score. Members of matched clusters are then
/// paired by closeness of Hellmann-Feynman slopes (when given), with the individual
/// overlap as a secondary key. `quality_rows` limits the minimum-overlap statistic to
/// the leading columns of `a`.
OverlapReport match_branches(const SpectrumSnapshot& a, const SpectrumSnapshot& b, double tau,
                             double eps_deg = 1e-6, std::span<const double> slopes_a = {},
                             std::span<const double> slopes_b = {},
                             std::optional<std::size_t> quality_rows = std::nullopt);

/// One accepted sample of one branch.
struct BranchNode {
    double t = 0.0;
    double lambda = 0.0;
    double lambda_dot_hf = 0.0;
    double residual = 0.0;
    Eigen::VectorXd psi;
};

/// Eigenbranches labeled consistently across t. Labels 0..k-1 are reported;
/// labels k..tracked-1 are guard branches that absorb relabeling at the top of
/// the window. Label j starts at the j-th lowest eigenvalue at t_min;
/// ties there are broken by order at the first node where the branches separate.
struct BranchSet {
    std::size_t k = 0;
    std::size_t tracked = 0;
    double weight = 1.0;
    std::vector<double> t;
    std::vector<double> step_quality;  ///< min overlap of the step into each node
    std::vector<char> refined;         ///< node inserted by bisection
    std::vector<std::vector<BranchNode>> branches;  ///< [label][node]
    std::vector<Eigen::VectorXd> spectra;           ///< sorted snapshot eigenvalues per node
    std::vector<char> cluster_tracked;              ///< per label
    std::size_t snapshots_computed = 0;

    std::size_t nodes() const noexcept { return t.size(); }
    const std::vector<BranchNode>& branch(std::size_t label) const { return branches.at(label); }
};

BranchSet track(const MatrixFamily& family, const TGrid& grid, const TrackOptions& options);
BranchSet track(const OperatorFamily& family, const TGrid& grid, const TrackOptions& options);

/// <(A + 2tV) psi, psi>. Rejects psi whose weighted norm differs from 1 by more than 1e-8.
double hf_derivative(const OperatorFamily& family, double t, const Eigen::VectorXd& psi);
double hf_derivative(const MatrixFamily& family, double t, const Eigen::VectorXd& psi);

/// Hellmann-Feynman slope versus a central difference of the tracked eigenvalue.
struct HfCheck {
    std::size_t branch = 0;
    double t = 0.0;
    double hf = 0.0;
    double finite_difference = 0.0;
    double relative_error = 0.0;  ///< |hf - fd| / (1 + |hf|)
};

/// Re-solves at t +- delta for every node with step quality >= tau and labels the
/// new pairs by matching from the node, for every reported branch not cluster-tracked.
std::vector<HfCheck> hellmann_feynman_check(const MatrixFamily& family, const BranchSet& set,
                                            double delta, double tau,
                                            const TrackOptions& options);

/// Spectrum conservation: at every node the branch values equal the snapshot
/// eigenvalues as multisets. Returns the largest deviation.
double spectrum_conservation_defect(const BranchSet& set);

/// Largest sign-gauge violation, max over branches and steps of -<psi_i, psi_{i+1}>, 0 if none.
double gauge_defect(const BranchSet& set);

}  // namespace branchlab
