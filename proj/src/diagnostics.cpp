#include "branchlab/diagnostics.hpp"

#include "branchlab/eigensolve.hpp"
#include "branchlab/error.hpp"
#include "branchlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace branchlab {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// <F psi, psi> for a pointwise (block-diagonal) field.
double field_expectation(const MatrixField& field, const Eigen::VectorXd& psi, double weight) {
    const auto m = static_cast<Eigen::Index>(field.rank);
    double sum = 0.0;
    for (std::size_t j = 0; j < field.values.size(); ++j) {
        const auto block = psi.segment(static_cast<Eigen::Index>(j) * m, m);
        sum += block.dot(field.values[j] * block);
    }
    return weight * sum;
}

/// ||(F - shift) psi|| for a pointwise field.
double field_residual_norm(const MatrixField& field, const Eigen::VectorXd& psi, double shift,
                           double weight) {
    const auto m = static_cast<Eigen::Index>(field.rank);
    double sum = 0.0;
    for (std::size_t j = 0; j < field.values.size(); ++j) {
        const auto block = psi.segment(static_cast<Eigen::Index>(j) * m, m);
        const Eigen::VectorXd applied = field.values[j] * block - shift * block;
        sum += applied.squaredNorm();
    }
    return std::sqrt(weight * sum);
}

double laplace_expectation(const OperatorFamily& family, const Eigen::VectorXd& psi) {
    return weighted_quadratic_form(family.laplacian, psi, family.weight());
}

double arc_distance(double x, double y) {
    double d = std::fmod(std::abs(x - y), kTwoPi);
    return std::min(d, kTwoPi - d);
}

double wrap_angle(double x) {
    double r = std::fmod(x, kTwoPi);
    if (r < 0.0) r += kTwoPi;
    return r;
}

TailStatistic tail_statistic(const Series& s, double t_start) {
    TailStatistic stat;
    stat.max = -std::numeric_limits<double>::infinity();
    stat.min = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& sample : s) {
        if (sample.t < t_start) continue;
        any = true;
        stat.max = std::max(stat.max, sample.value);
        stat.min = std::min(stat.min, sample.value);
        stat.last = sample.value;
    }
    if (!any) {
        stat.max = stat.min = stat.last = std::numeric_limits<double>::quiet_NaN();
    }
    return stat;
}

}  // namespace

ValidWindow valid_window(const OperatorFamily& family, const BranchSet& set,
                         const DiagnosticsOptions& options) {
    if (set.nodes() == 0) throw PreconditionError("branch set is empty");
    ValidWindow w;
    w.horizon = validity_horizon(family.grid, options.points_per_well);
    w.t_lo = std::max(options.t_floor, set.t.front());
    w.t_hi = std::min(set.t.back(), w.horizon);
    if (!(w.t_hi > w.t_lo)) {
        throw PreconditionError("valid window [" + std::to_string(w.t_lo) + ", " +
                                std::to_string(w.t_hi) + "] is empty");
    }
    return w;
}

Series scaled_energy_series(std::span<const BranchNode> branch, double t_floor) {
    Series out;
    for (const auto& node : branch) {
        if (node.t < t_floor || node.t <= 0.0) continue;
        out.push_back({node.t, node.lambda / (node.t * node.t)});
    }
    return out;
}

Series laplace_energy_series(std::span<const BranchNode> branch, const OperatorFamily& family,
                             double t_floor) {
    Series out;
    for (const auto& node : branch) {
        if (node.t < t_floor || node.t <= 0.0) continue;
        out.push_back({node.t, laplace_expectation(family, node.psi) / (node.t * node.t)});
    }
    return out;
}

Series potential_residual_series(std::span<const BranchNode> branch, const OperatorFamily& family,
                                 double mu, double t_floor) {
    if (!std::isfinite(mu)) throw PreconditionError("mu must be finite");
    Series out;
    for (const auto& node : branch) {
        if (node.t < t_floor) continue;
        out.push_back({node.t, field_residual_norm(family.field_v, node.psi, mu, family.weight())});
    }
    return out;
}

Series gradient_localization_series(std::span<const BranchNode> branch,
                                    const OperatorFamily& family, double t_floor) {
    if (!family.scalar_potential) {
        throw PreconditionError(
            "gradient localization needs a scalar potential (V = v * id with sampled v')");
    }
    const auto& dv = family.scalar_potential->d1;
    const auto m = static_cast<Eigen::Index>(family.rank);
    const double w = family.weight();
    Series out;
    for (const auto& node : branch) {
        if (node.t < t_floor) continue;
        double sum = 0.0;
        for (std::size_t j = 0; j < dv.size(); ++j) {
            const double g = dv[j] * dv[j];
            sum += g * g * node.psi.segment(static_cast<Eigen::Index>(j) * m, m).squaredNorm();
        }
        out.push_back({node.t, std::sqrt(w * sum)});
    }
    return out;
}

std::optional<double> value_at(const Series& series, double t) {
    for (const auto& s : series) {
        if (s.t == t) return s.value;
    }
    return std::nullopt;
}

MuOmegaFit estimate_mu_omega(std::span<const double> t, std::span<const double> lambda,
                             double tail_fraction, double horizon) {
    if (t.size() != lambda.size()) throw PreconditionError("t and lambda sizes differ");
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
        throw PreconditionError("tail_fraction must lie in (0, 1]");
    }
    double t_first = std::numeric_limits<double>::infinity();
    double t_last = -std::numeric_limits<double>::infinity();
    for (double ti : t) {
        if (ti > horizon) continue;
        t_first = std::min(t_first, ti);
        t_last = std::max(t_last, ti);
    }
    MuOmegaFit fit;
    fit.t_hi = t_last;
    fit.t_lo = t_last - tail_fraction * (t_last - t_first);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] <= horizon && t[i] >= fit.t_lo - 1e-12 * std::abs(fit.t_lo)) idx.push_back(i);
    }
    if (idx.size() < 5 || !(t_last > 0.0)) {
        throw PreconditionError("mu/omega fit needs at least 5 tail samples below the horizon, have " +
                                std::to_string(idx.size()));
    }
    fit.samples = idx.size();
    const auto rows = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd design(rows, 3);
    Eigen::VectorXd rhs(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double s = t[idx[static_cast<std::size_t>(r)]] / t_last;
        design(r, 0) = s * s;
        design(r, 1) = s;
        design(r, 2) = 1.0;
        rhs(r) = lambda[idx[static_cast<std::size_t>(r)]];
    }
    const Eigen::Vector3d coef = design.colPivHouseholderQr().solve(rhs);
    fit.mu = coef(0) / (t_last * t_last);
    fit.omega = coef(1) / t_last;
    fit.c = coef(2);
    const double rms = std::sqrt((design * coef - rhs).squaredNorm() / static_cast<double>(rows));
    fit.fit_residual = rms / (1.0 + std::abs(fit.mu) * t_last * t_last);
    return fit;
}

MuOmegaFit estimate_mu_omega(std::span<const BranchNode> branch, double tail_fraction,
                             const ValidWindow& window) {
    std::vector<double> t, lambda;
    for (const auto& node : branch) {
        if (node.t < window.t_lo) continue;
        t.push_back(node.t);
        lambda.push_back(node.lambda);
    }
    return estimate_mu_omega(t, lambda, tail_fraction, window.t_hi);
}

double laplacian_lower_bound(const OperatorFamily& family) {
    return eigendecompose(family.laplacian, 1, 0.0, family.weight()).eigenvalues(0);
}

double monotonicity_constant(const OperatorFamily& family, double laplacian_min, double t_floor) {
    double c = family.field_a.max_spectral_norm();
    // Roundoff-level negatives of a semi-definite Laplacian do not count.
    if (laplacian_min < -1e-10) c += 2.0 * std::abs(laplacian_min) / t_floor;
    return c;
}

std::vector<MonotonicityViolation> find_increases(const Series& g) {
    std::vector<MonotonicityViolation> out;
    for (std::size_t i = 1; i < g.size(); ++i) {
        const double increase = g[i].value - g[i - 1].value;
        if (increase > 1e-8 * (1.0 + std::abs(g[i].value))) out.push_back({g[i].t, increase});
    }
    return out;
}

MonotonicityResult monotonicity_check(std::span<const BranchNode> branch, double c_used,
                                      double t_start, double t_end) {
    MonotonicityResult result;
    result.c_used = c_used;
    Series g;
    for (const auto& node : branch) {
        if (node.t < t_start || node.t > t_end || node.t <= 0.0) continue;
        g.push_back({node.t, node.lambda / (node.t * node.t) + c_used / node.t});
    }
    result.steps_checked = g.empty() ? 0 : g.size() - 1;
    result.violations = find_increases(g);
    return result;
}

std::vector<double> select_tn(const Series& laplace_series, std::size_t count) {
    if (laplace_series.empty()) throw PreconditionError("cannot select t_n from an empty series");
    const double t_first = laplace_series.front().t;
    const double t_last = laplace_series.back().t;
    const double cut = t_first + 0.5 * (t_last - t_first);
    std::vector<SeriesSample> candidates;
    for (const auto& s : laplace_series) {
        if (s.t >= cut) candidates.push_back(s);
    }
    if (count > candidates.size()) {
        throw PreconditionError("requested " + std::to_string(count) + " t_n values but only " +
                                std::to_string(candidates.size()) + " samples are available");
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (a.value != b.value) return a.value < b.value;
        return a.t > b.t;
    });
    std::vector<double> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(candidates[i].t);
    std::sort(out.begin(), out.end());
    return out;
}

double sobolev_norm(const OperatorFamily& family, const Eigen::VectorXd& psi, int s) {
    if (s < 1) throw PreconditionError("Sobolev order must be positive");
    if (psi.size() != family.dimension()) throw PreconditionError("section has wrong dimension");
    // (I + Delta)^s split evenly between the two sides of the product.
    Eigen::VectorXd half = psi;
    for (int i = 0; i < s / 2; ++i) half = (half + family.laplacian * half).eval();
    Eigen::VectorXd other = half;
    if (s % 2 == 1) other = half + family.laplacian * half;
    return std::sqrt(weighted_dot(half, other, family.weight()));
}

SobolevDecay sobolev_decay_series(std::span<const BranchNode> branch, const OperatorFamily& family,
                                  int s, std::span<const double> tn) {
    SobolevDecay out;
    out.s = s;
    for (double t : tn) {
        auto it = std::find_if(branch.begin(), branch.end(), [&](const BranchNode& n) { return n.t == t; });
        if (it == branch.end()) throw PreconditionError("t_n value is not a tracked node");
        out.values.push_back({t, std::pow(t, -s) * sobolev_norm(family, it->psi, s)});
    }
    out.decaying = out.values.size() >= 2 &&
                   out.values.back().value < 0.5 * out.values.front().value;
    return out;
}

bool RegionMask::empty() const {
    return std::none_of(inside.begin(), inside.end(), [](char c) { return c != 0; });
}

RegionMask sigma_mu_mask(const OperatorFamily& family, double mu, double radius, double mu_band) {
    const std::size_t n = family.grid.n_points;
    const auto m = static_cast<Eigen::Index>(family.rank);
    std::vector<double> det(n), distance(n);
    for (std::size_t j = 0; j < n; ++j) {
        const Eigen::MatrixXd shifted =
            family.field_v.values[j] - mu * Eigen::MatrixXd::Identity(m, m);
        det[j] = shifted.determinant();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(shifted, Eigen::EigenvaluesOnly);
        distance[j] = es.eigenvalues().cwiseAbs().minCoeff();
    }
    const double tol_det = 1e-6 * std::pow(1.0 + std::abs(mu), static_cast<double>(m));
    const double h = family.grid.spacing;

    RegionMask mask;
    mask.radius = radius;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t prev = (j + n - 1) % n;
        const std::size_t next = (j + 1) % n;
        const double a = std::abs(det[j]);
        if (a <= std::abs(det[prev]) && a <= std::abs(det[next]) &&
            (a < tol_det || distance[j] <= mu_band)) {
            mask.centers.push_back(family.grid.points[j]);
        }
        if ((det[j] < 0.0 && det[next] > 0.0) || (det[j] > 0.0 && det[next] < 0.0)) {
            const double frac = det[j] / (det[j] - det[next]);
            mask.centers.push_back(wrap_angle(family.grid.points[j] + frac * h));
        }
    }
    mask.inside.assign(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        for (double c : mask.centers) {
            if (arc_distance(family.grid.points[j], c) <= radius) {
                mask.inside[j] = 1;
                break;
            }
        }
    }
    return mask;
}

double mass_outside(const OperatorFamily& family, const Eigen::VectorXd& psi,
                    const RegionMask& mask) {
    const auto m = static_cast<Eigen::Index>(family.rank);
    if (mask.inside.size() != family.grid.n_points || psi.size() != family.dimension()) {
        throw PreconditionError("mask or section does not match the family grid");
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < mask.inside.size(); ++j) {
        if (mask.inside[j]) continue;
        sum += psi.segment(static_cast<Eigen::Index>(j) * m, m).squaredNorm();
    }
    return std::sqrt(family.weight() * sum);
}

std::vector<CriticalPoint> critical_values(const CircleGrid& grid,
                                           const ScalarFunctionSamples& v) {
    const std::size_t n = grid.n_points;
    if (v.values.size() != n || v.d1.size() != n || v.d2.size() != n) {
        throw PreconditionError("function samples do not match the grid");
    }
    const double h = grid.spacing;
    std::vector<char> flat(n);
    for (std::size_t j = 0; j < n; ++j) flat[j] = std::abs(v.d1[j]) < 1e-10 ? 1 : 0;

    std::vector<CriticalPoint> out;
    if (std::all_of(flat.begin(), flat.end(), [](char c) { return c != 0; })) {
        out.push_back({0.0, v.values[0]});
        return out;
    }
    // Runs of flat points, walked from a non-flat start so no run wraps unseen.
    std::size_t start = 0;
    while (flat[start]) ++start;
    for (std::size_t step = 1; step <= n; ++step) {
        const std::size_t j = (start + step) % n;
        if (!flat[j]) continue;
        std::size_t len = 0;
        while (flat[(j + len) % n]) ++len;
        const double offset = 0.5 * static_cast<double>(len - 1);
        const std::size_t mid = (j + (len - 1) / 2) % n;
        out.push_back({wrap_angle(grid.points[j] + offset * h), v.values[mid]});
        step += len - 1;
    }
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t next = (j + 1) % n;
        if (flat[j] || flat[next]) continue;
        if ((v.d1[j] < 0.0) == (v.d1[next] < 0.0)) continue;
        const double delta = -v.d1[j] * h / (v.d1[next] - v.d1[j]);
        const double value = v.values[j] + v.d1[j] * delta + 0.5 * v.d2[j] * delta * delta;
        out.push_back({wrap_angle(grid.points[j] + delta), value});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.x < b.x; });
    return out;
}

BoundednessVerdict assess_boundedness(const Series& series, double t_start) {
    BoundednessVerdict verdict;
    std::vector<std::pair<double, double>> points;
    for (const auto& s : series) {
        if (s.t < t_start || s.t <= 0.0) continue;
        const double a = std::abs(s.value);
        verdict.tail_max = std::max(verdict.tail_max, a);
        points.emplace_back(s.t, a);
    }
    // Log-log slope over samples that are not negligible against the tail maximum.
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    double count = 0.0;
    for (const auto& [t, a] : points) {
        if (!(a > 1e-12 * verdict.tail_max) || a == 0.0) continue;
        const double x = std::log(t);
        const double y = std::log(a);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        count += 1.0;
    }
    const double denom = count * sxx - sx * sx;
    if (count >= 3.0 && denom > 0.0) verdict.growth_exponent = (count * sxy - sx * sy) / denom;
    // Series that stay at roundoff level are bounded whatever their fitted slope.
    verdict.unbounded = verdict.tail_max > 1e-8 && verdict.growth_exponent > 0.25;
    return verdict;
}

EquivalenceRatios equivalence_ratios(std::span<const BranchNode> branch,
                                     const OperatorFamily& family, double mu,
                                     const ValidWindow& window) {
    EquivalenceRatios r;
    const double w = family.weight();
    const BranchNode* prev = nullptr;
    for (const auto& node : branch) {
        if (!window.contains(node.t)) continue;
        const double t = node.t;
        r.laplace_over_t.push_back({t, laplace_expectation(family, node.psi) / t});
        r.potential_gap_times_t.push_back(
            {t, t * (field_expectation(family.field_v, node.psi, w) - mu)});
        r.slope_gap.push_back({t, node.lambda_dot_hf - 2.0 * t * mu});
        r.scaled_remainder.push_back({t, t * (node.lambda / (t * t) - mu)});
        if (prev != nullptr) {
            const double tm = 0.5 * (prev->t + t);
            const double diff = (node.lambda / (t * t) - prev->lambda / (prev->t * prev->t)) /
                                (t - prev->t);
            r.scaled_slope.push_back({tm, tm * tm * diff});
        }
        prev = &node;
    }
    return r;
}

FamilyFacts family_facts(const OperatorFamily& family, const DiagnosticsOptions& options) {
    FamilyFacts f;
    f.laplacian_min = laplacian_lower_bound(family);
    f.c_used = monotonicity_constant(family, f.laplacian_min, options.t_floor);
    f.horizon = validity_horizon(family.grid, options.points_per_well);
    f.scalar_potential = family.scalar_potential.has_value();
    f.potential_min = std::numeric_limits<double>::infinity();
    for (const auto& v : family.field_v.values) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v, Eigen::EigenvaluesOnly);
        f.potential_min = std::min(f.potential_min, es.eigenvalues()(0));
    }
    if (f.scalar_potential) f.critical = critical_values(family.grid, *family.scalar_potential);
    return f;
}

DiagnosticsReport diagnose(const OperatorFamily& family, const BranchSet& set, std::size_t label,
                           const FamilyFacts& facts, const DiagnosticsOptions& options) {
    if (label >= set.tracked) throw PreconditionError("branch label out of range");
    const auto& branch = set.branch(label);
    const double w = family.weight();

    DiagnosticsReport rep;
    rep.branch = label;
    rep.cluster_tracked = set.cluster_tracked[label] != 0;
    rep.window = valid_window(family, set, options);
    const ValidWindow& win = rep.window;

    rep.fit = estimate_mu_omega(branch, options.tail_fraction, win);
    const double mu = rep.fit.mu;

    rep.monotonicity = monotonicity_check(
        branch, facts.c_used, win.t_lo + options.monotonicity_skip * (win.t_hi - win.t_lo), win.t_hi);
    rep.monotonicity.laplacian_min = facts.laplacian_min;

    // Laplace energy on the window drives the t_n selection.
    Series laplace_all = laplace_energy_series(branch, family, options.t_floor);
    rep.laplace_energy_min = std::numeric_limits<double>::infinity();
    Series laplace_window;
    for (const auto& s : laplace_all) {
        rep.laplace_energy_min = std::min(rep.laplace_energy_min, s.value);
        if (win.contains(s.t)) laplace_window.push_back(s);
    }
    std::size_t available = 0;
    if (!laplace_window.empty()) {
        const double cut = laplace_window.front().t +
                           0.5 * (laplace_window.back().t - laplace_window.front().t);
        for (const auto& s : laplace_window) available += s.t >= cut ? 1 : 0;
    }
    rep.tn = select_tn(laplace_window, std::min(options.tn_count, available));
    for (double t : rep.tn) rep.laplace_at_tn.push_back(*value_at(laplace_window, t));

    const double band = rep.fit.fit_residual;
    auto at_tn = [&](const Series& s) {
        std::vector<double> out;
        for (double t : rep.tn) out.push_back(*value_at(s, t));
        return out;
    };
    rep.potential_residual_at_tn = at_tn(potential_residual_series(branch, family, mu, win.t_lo));
    rep.potential_residual_minus = at_tn(potential_residual_series(branch, family, mu - band, win.t_lo));
    rep.potential_residual_plus = at_tn(potential_residual_series(branch, family, mu + band, win.t_lo));
    if (family.scalar_potential) {
        rep.gradient_at_tn = at_tn(gradient_localization_series(branch, family, win.t_lo));
    }

    // Sigma_mu is located with the same mu accuracy used for the critical-value test.
    const double mu_band = std::max(1e-2, 5.0 * rep.fit.fit_residual);
    for (double radius : options.radii) {
        LocalizationEntry entry;
        entry.radius = radius;
        const RegionMask mask = sigma_mu_mask(family, mu, radius, mu_band);
        entry.centers = mask.centers;
        for (double t : rep.tn) {
            auto it = std::find_if(branch.begin(), branch.end(), [&](const BranchNode& n) { return n.t == t; });
            entry.mass_outside.push_back(mass_outside(family, it->psi, mask));
        }
        rep.localization.push_back(std::move(entry));
    }

    for (int s : options.sobolev_orders) {
        rep.sobolev.push_back(sobolev_decay_series(branch, family, s, rep.tn));
    }

    if (facts.scalar_potential && !facts.critical.empty()) {
        double gap = std::numeric_limits<double>::infinity();
        for (const auto& c : facts.critical) gap = std::min(gap, std::abs(mu - c.value));
        rep.critical_value_gap = gap;
    }
    rep.conjecture_gap = mu - facts.potential_min;

    // Tail statistics standing in for the limsup / liminf statements.
    Series pot, ratio, log_slope, lap, inv_slope;
    rep.growth_bound = 0.0;
    for (const auto& node : branch) {
        if (!win.contains(node.t)) continue;
        const double t = node.t;
        rep.growth_bound = std::max(rep.growth_bound, std::abs(node.lambda) / (1.0 + t * t));
        pot.push_back({t, field_expectation(family.field_v, node.psi, w)});
        ratio.push_back({t, node.lambda_dot_hf / (2.0 * t)});
        log_slope.push_back({t, node.lambda_dot_hf / t - 2.0 * node.lambda / (t * t)});
        lap.push_back({t, laplace_expectation(family, node.psi) / (t * t)});
        inv_slope.push_back({t, node.lambda_dot_hf / t - node.lambda / (t * t)});
    }
    const double tail_start = win.upper_half();
    rep.potential_expectation = tail_statistic(pot, tail_start);
    rep.slope_ratio = tail_statistic(ratio, tail_start);
    rep.log_slope = tail_statistic(log_slope, tail_start);
    rep.laplace_tail = tail_statistic(lap, tail_start);
    rep.t_inverse_slope = tail_statistic(inv_slope, tail_start);

    const EquivalenceRatios eq = equivalence_ratios(branch, family, mu, win);
    rep.equivalence = {
        {"laplace_over_t", assess_boundedness(eq.laplace_over_t, tail_start)},
        {"potential_gap_times_t", assess_boundedness(eq.potential_gap_times_t, tail_start)},
        {"scaled_slope", assess_boundedness(eq.scaled_slope, tail_start)},
        {"slope_gap", assess_boundedness(eq.slope_gap, tail_start)},
        {"scaled_remainder", assess_boundedness(eq.scaled_remainder, tail_start)},
    };
    return rep;
}

}  // namespace branchlab
