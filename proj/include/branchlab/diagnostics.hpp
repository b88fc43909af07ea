#pragma once

#include "branchlab/branchtrack.hpp"
#include "branchlab/operators.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace branchlab {

struct SeriesSample {
    double t = 0.0;
    double value = 0.0;
};
using Series = std::vector<SeriesSample>;

struct DiagnosticsOptions {
    double t_floor = 1.0;
    double tail_fraction = 0.2;
    double radius = 0.5;
    std::vector<double> radii = {0.25, 0.5, 1.0};
    std::size_t tn_count = 8;
    std::vector<int> sobolev_orders = {1, 2};
    double points_per_well = 8.0;
    /// Monotonicity is audited on the upper (1 - skip) part of the valid window.
    double monotonicity_skip = 0.2;
};

/// Window [t_floor, min(t_max, validity horizon)] on which diagnostics are trusted.
struct ValidWindow {
    double t_lo = 0.0;
    double t_hi = 0.0;
    double horizon = 0.0;

    bool contains(double t) const { return t >= t_lo && t <= t_hi; }
    double upper_half() const { return t_lo + 0.5 * (t_hi - t_lo); }
};

ValidWindow valid_window(const OperatorFamily& family, const BranchSet& set,
                         const DiagnosticsOptions& options);

// ---- series -------------------------------------------------------------

/// lambda / t^2 for nodes with t >= t_floor.
Series scaled_energy_series(std::span<const BranchNode> branch, double t_floor = 1.0);

/// t^{-2} <Delta psi, psi> for nodes with t >= t_floor.
Series laplace_energy_series(std::span<const BranchNode> branch, const OperatorFamily& family,
                             double t_floor = 1.0);

/// ||(V - mu) psi|| for nodes with t >= t_floor.
Series potential_residual_series(std::span<const BranchNode> branch, const OperatorFamily& family,
                                 double mu, double t_floor = 1.0);

/// || |dV|^2 psi || = ||(v')^2 psi||. Throws PreconditionError unless V is scalar.
Series gradient_localization_series(std::span<const BranchNode> branch,
                                    const OperatorFamily& family, double t_floor = 1.0);

/// Value of `series` at `t` (exact node match), if present.
std::optional<double> value_at(const Series& series, double t);

// ---- semi-classical limit ----------------------------------------------

struct MuOmegaFit {
    double mu = 0.0;
    double omega = 0.0;
    double c = 0.0;
    double fit_residual = 0.0;
    std::size_t samples = 0;
    double t_lo = 0.0;  ///< tail window used
    double t_hi = 0.0;
};

/// Least-squares fit lambda ~ mu t^2 + omega t + c over the upper `tail_fraction`
/// of the samples with t <= horizon. fit_residual is the RMS misfit divided by
/// (1 + |mu| t_hi^2). Throws PreconditionError with fewer than 5 tail samples.
MuOmegaFit estimate_mu_omega(std::span<const double> t, std::span<const double> lambda,
                             double tail_fraction, double horizon);
MuOmegaFit estimate_mu_omega(std::span<const BranchNode> branch, double tail_fraction,
                             const ValidWindow& window);

// ---- monotonicity -------------------------------------------------------

struct MonotonicityViolation {
    double t = 0.0;
    double magnitude = 0.0;
};

struct MonotonicityResult {
    double c_used = 0.0;
    double laplacian_min = 0.0;
    std::size_t steps_checked = 0;
    std::vector<MonotonicityViolation> violations;
};

/// Smallest eigenvalue of the discrete Laplacian.
double laplacian_lower_bound(const OperatorFamily& family);

/// C = sup_x ||A(x)||_2, enlarged by 2|lambda_min| / t_floor if the Laplacian has
/// a lower bound below -1e-10.
double monotonicity_constant(const OperatorFamily& family, double laplacian_min, double t_floor);

/// Flags every increase g_{i+1} - g_i > 1e-8 (1 + |g_{i+1}|) of the series.
std::vector<MonotonicityViolation> find_increases(const Series& g);

/// Audits g(t) = lambda/t^2 + C/t on nodes with t in [t_start, t_end].
MonotonicityResult monotonicity_check(std::span<const BranchNode> branch, double c_used,
                                      double t_start, double t_end);

// ---- localization -------------------------------------------------------

/// The `count` nodes with the smallest values in the upper half of the series'
/// t-range, returned ascending. Ties prefer larger t.
std::vector<double> select_tn(const Series& laplace_series, std::size_t count);

/// <(I + Delta_h)^s psi, psi>^{1/2}, s >= 1.
double sobolev_norm(const OperatorFamily& family, const Eigen::VectorXd& psi, int s);

struct SobolevDecay {
    int s = 1;
    Series values;  ///< t^{-s} ||psi_t||_{H^s} at the selected t_n
    bool decaying = false;
};

SobolevDecay sobolev_decay_series(std::span<const BranchNode> branch, const OperatorFamily& family,
                                  int s, std::span<const double> tn);

/// Grid points within arc distance `radius` of Sigma_mu = {det(V(x) - mu) = 0}.
struct RegionMask {
    std::vector<char> inside;
    std::vector<double> centers;
    double radius = 0.0;

    bool empty() const;
};

/// Sigma_mu is detected as sign changes of det(V - mu) between neighbouring grid
/// points and local minima of |det(V - mu)| below 1e-6 (1 + |mu|)^m. With
/// mu_band > 0 a local minimum also qualifies when some eigenvalue of V(x) lies
/// within mu_band of mu, absorbing the uncertainty of an estimated mu.
RegionMask sigma_mu_mask(const OperatorFamily& family, double mu, double radius,
                         double mu_band = 0.0);

/// Weighted L2 norm of psi restricted to the complement of the mask.
double mass_outside(const OperatorFamily& family, const Eigen::VectorXd& psi,
                    const RegionMask& mask);

struct CriticalPoint {
    double x = 0.0;
    double value = 0.0;
};

/// Sign changes of v' (refined by one secant step) and runs of |v'| < 1e-10
/// (collapsed to their midpoint).
std::vector<CriticalPoint> critical_values(const CircleGrid& grid,
                                           const ScalarFunctionSamples& v);

// ---- concluding-remark ratios ------------------------------------------

struct BoundednessVerdict {
    double tail_max = 0.0;     ///< max |value| over the tail
    double growth_exponent = 0.0;  ///< log-log slope of |value| against t
    bool unbounded = false;
};

/// Growth exponent above 0.25 on the tail flags the series as unbounded, unless
/// its tail maximum is at most 1e-8 (roundoff level).
BoundednessVerdict assess_boundedness(const Series& series, double t_start);

struct EquivalenceRatios {
    Series laplace_over_t;        ///< (a) <Delta psi, psi> / t
    Series potential_gap_times_t; ///< (b) t <(V - mu) psi, psi>
    Series scaled_slope;          ///< (c/d) t^2 d/dt (t^{-2} lambda), discrete
    Series slope_gap;             ///< (e) lambda' - 2 t mu
    Series scaled_remainder;      ///< t (t^{-2} lambda - mu)
};

EquivalenceRatios equivalence_ratios(std::span<const BranchNode> branch,
                                     const OperatorFamily& family, double mu,
                                     const ValidWindow& window);

// ---- full report --------------------------------------------------------

/// Quantities shared by all branches of one family.
struct FamilyFacts {
    double laplacian_min = 0.0;
    double c_used = 0.0;
    double horizon = 0.0;
    bool scalar_potential = false;
    double potential_min = 0.0;  ///< min over x of the smallest eigenvalue of V(x)
    std::vector<CriticalPoint> critical;
};

FamilyFacts family_facts(const OperatorFamily& family, const DiagnosticsOptions& options);

struct LocalizationEntry {
    double radius = 0.0;
    std::vector<double> centers;
    std::vector<double> mass_outside;  ///< at each t_n
};

struct TailStatistic {
    double max = 0.0;
    double min = 0.0;
    double last = 0.0;
};

struct DiagnosticsReport {
    std::size_t branch = 0;
    bool cluster_tracked = false;
    ValidWindow window;
    MuOmegaFit fit;
    MonotonicityResult monotonicity;
    std::vector<double> tn;
    std::vector<double> laplace_at_tn;
    std::vector<double> potential_residual_at_tn;
    std::vector<double> potential_residual_minus;  ///< at mu - fit_residual
    std::vector<double> potential_residual_plus;   ///< at mu + fit_residual
    std::optional<std::vector<double>> gradient_at_tn;
    std::vector<LocalizationEntry> localization;
    std::vector<SobolevDecay> sobolev;
    std::optional<double> critical_value_gap;
    double conjecture_gap = 0.0;  ///< mu - min_x V, signed
    double growth_bound = 0.0;  ///< max |lambda| / (1 + t^2) on the window
    double laplace_energy_min = 0.0;  ///< over all nodes with t >= t_floor
    TailStatistic potential_expectation;  ///< <V psi, psi>
    TailStatistic slope_ratio;            ///< lambda' / (2t)
    TailStatistic log_slope;              ///< t d/dt (t^{-2} lambda)
    TailStatistic laplace_tail;           ///< t^{-2} <Delta psi, psi>
    TailStatistic t_inverse_slope;        ///< d/dt (t^{-1} lambda)
    std::vector<std::pair<std::string, BoundednessVerdict>> equivalence;
};

DiagnosticsReport diagnose(const OperatorFamily& family, const BranchSet& set, std::size_t label,
                           const FamilyFacts& facts, const DiagnosticsOptions& options);

}  // namespace branchlab
