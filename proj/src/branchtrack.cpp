#include "branchlab/branchtrack.hpp"

#include "branchlab/assignment.hpp"
#include "branchlab/error.hpp"
#include "branchlab/linalg.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace branchlab {

namespace {

// Pairs closer than this (relative to 1 + |lambda|) are degenerate to working
// precision: the solver's basis inside such a group carries no information.
constexpr double kNumericalDegeneracy = 1e-9;
// Hellmann-Feynman slopes closer than this (relative) are treated as tied.
constexpr double kSlopeTie = 1e-9;
constexpr double kOverlapFloor = 1e-300;

template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    const std::size_t workers =
        std::min<std::size_t>(count, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

void canonicalize_sign(Eigen::Ref<Eigen::VectorXd> v, Eigen::Ref<Eigen::VectorXd> applied,
                       Eigen::Ref<Eigen::VectorXd> deriv_applied) {
    const double peak = v.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) >= 0.5 * peak) {
            if (v(i) < 0.0) {
                v = -v;
                applied = -applied;
                deriv_applied = -deriv_applied;
            }
            return;
        }
    }
}

/// Consecutive runs of `values` (ascending order given by `order`) whose gaps
/// are below rel_tol (1 + |value|).
std::vector<std::vector<int>> chain_clusters(const Eigen::VectorXd& values,
                                             const std::vector<int>& order, double rel_tol) {
    std::vector<std::vector<int>> clusters;
    if (order.empty()) return clusters;
    clusters.push_back({order[0]});
    for (std::size_t i = 1; i < order.size(); ++i) {
        const double prev = values(order[i - 1]);
        const double cur = values(order[i]);
        const double scale = 1.0 + std::max(std::abs(prev), std::abs(cur));
        if (cur - prev < rel_tol * scale) {
            clusters.back().push_back(order[i]);
        } else {
            clusters.push_back({order[i]});
        }
    }
    return clusters;
}

std::vector<int> ascending_order(const Eigen::VectorXd& values) {
    std::vector<int> order(static_cast<std::size_t>(values.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return values(a) < values(b); });
    return order;
}

/// Snapshot with the basis inside numerically degenerate groups rotated to
/// diagonalize the projected derivative, so that each vector carries a
/// well-defined Hellmann-Feynman slope.
struct Prepared {
    SpectrumSnapshot snap;
    Eigen::MatrixXd applied;        // M(t) * eigenvectors
    Eigen::MatrixXd deriv_applied;  // M'(t) * eigenvectors
    Eigen::VectorXd slopes;
    std::vector<std::vector<int>> tie_groups;  // degenerate with tied slopes: free basis

    void refresh(int col) {
        const double w = snap.weight;
        const auto psi = snap.eigenvectors.col(col);
        slopes(col) = w * psi.dot(deriv_applied.col(col));
        snap.residuals(col) =
            weighted_norm(applied.col(col) - snap.eigenvalues(col) * psi, w);
    }
};

Prepared prepare(SpectrumSnapshot snap, const MatrixFamily& family, const Eigen::MatrixXd& matrix) {
    Prepared p;
    const Eigen::MatrixXd deriv = family.derivative(snap.t);
    p.applied = matrix * snap.eigenvectors;
    p.deriv_applied = deriv * snap.eigenvectors;
    p.snap = std::move(snap);
    auto& s = p.snap;
    const int count = static_cast<int>(s.count());
    p.slopes = Eigen::VectorXd::Zero(count);
    for (int i = 0; i < count; ++i) {
        canonicalize_sign(s.eigenvectors.col(i), p.applied.col(i), p.deriv_applied.col(i));
    }

    std::vector<int> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    const auto groups = chain_clusters(s.eigenvalues, order, kNumericalDegeneracy);
    for (const auto& group : groups) {
        if (group.size() < 2) continue;
        const int first = group.front();
        const int size = static_cast<int>(group.size());
        auto block = s.eigenvectors.middleCols(first, size);
        Eigen::MatrixXd projected = s.weight * block.transpose() * p.deriv_applied.middleCols(first, size);
        projected = 0.5 * (projected + projected.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(projected);
        const Eigen::MatrixXd& rot = es.eigenvectors();
        s.eigenvectors.middleCols(first, size) = (block * rot).eval();
        p.applied.middleCols(first, size) = (p.applied.middleCols(first, size) * rot).eval();
        p.deriv_applied.middleCols(first, size) =
            (p.deriv_applied.middleCols(first, size) * rot).eval();
        for (int c = first; c < first + size; ++c) {
            canonicalize_sign(s.eigenvectors.col(c), p.applied.col(c), p.deriv_applied.col(c));
        }
        const Eigen::VectorXd& sl = es.eigenvalues();
        const double scale = 1.0 + sl.cwiseAbs().maxCoeff();
        std::vector<int> tie = {first};
        for (int c = 1; c <= size; ++c) {
            if (c < size && sl(c) - sl(c - 1) <= kSlopeTie * scale) {
                tie.push_back(first + c);
                continue;
            }
            if (tie.size() > 1) p.tie_groups.push_back(tie);
            if (c < size) tie = {first + c};
        }
    }
    for (int i = 0; i < count; ++i) p.refresh(i);
    return p;
}

/// Tracked pairs at one node, columns indexed by branch label.
struct State {
    double t = 0.0;
    double weight = 1.0;
    Eigen::VectorXd lambda;
    Eigen::VectorXd slopes;
    Eigen::VectorXd residuals;
    Eigen::MatrixXd psi;

    SpectrumSnapshot as_snapshot() const {
        SpectrumSnapshot s;
        s.t = t;
        s.weight = weight;
        s.eigenvalues = lambda;
        s.eigenvectors = psi;
        s.residuals = residuals;
        return s;
    }
};

State initial_state(const Prepared& p) {
    State s;
    s.t = p.snap.t;
    s.weight = p.snap.weight;
    s.lambda = p.snap.eigenvalues;
    s.slopes = p.slopes;
    s.residuals = p.snap.residuals;
    s.psi = p.snap.eigenvectors;
    return s;
}

/// Rotates each free (tied-slope degenerate) group of `b` onto the previous
/// vectors it spans best (orthogonal Procrustes).
void align_free_groups(Prepared& b, const State& prev) {
    const double w = b.snap.weight;
    for (const auto& group : b.tie_groups) {
        const int first = group.front();
        const int size = static_cast<int>(group.size());
        auto block = b.snap.eigenvectors.middleCols(first, size);
        const Eigen::MatrixXd proj = w * prev.psi.transpose() * block;  // labels x size
        std::vector<int> labels(static_cast<std::size_t>(proj.rows()));
        std::iota(labels.begin(), labels.end(), 0);
        std::stable_sort(labels.begin(), labels.end(), [&](int x, int y) {
            return proj.row(x).squaredNorm() > proj.row(y).squaredNorm();
        });
        Eigen::MatrixXd g(size, size);
        for (int r = 0; r < size; ++r) g.row(r) = proj.row(labels[static_cast<std::size_t>(r)]);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(g, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Eigen::MatrixXd rot = svd.matrixV() * svd.matrixU().transpose();
        b.snap.eigenvectors.middleCols(first, size) = (block * rot).eval();
        b.applied.middleCols(first, size) = (b.applied.middleCols(first, size) * rot).eval();
        b.deriv_applied.middleCols(first, size) =
            (b.deriv_applied.middleCols(first, size) * rot).eval();
        for (int c = first; c < first + size; ++c) b.refresh(c);
    }
}

struct Step {
    State next;
    OverlapReport report;
    std::vector<int> discontinuous;  // reported labels violating the continuity bound
    bool order_swap = false;         // two branches exchange order inside the step
};

Step advance(const State& prev, Prepared b, const TrackOptions& options) {
    align_free_groups(b, prev);
    Step step;
    const std::vector<double> slopes_a(prev.slopes.data(), prev.slopes.data() + prev.slopes.size());
    const std::vector<double> slopes_b(b.slopes.data(), b.slopes.data() + b.slopes.size());
    step.report = match_branches(prev.as_snapshot(), b.snap, options.tau, options.eps_deg,
                                 slopes_a, slopes_b, options.k);

    const auto count = prev.lambda.size();
    State& next = step.next;
    next.t = b.snap.t;
    next.weight = b.snap.weight;
    next.lambda.resize(count);
    next.slopes.resize(count);
    next.residuals.resize(count);
    next.psi.resize(prev.psi.rows(), count);
    const double w = prev.weight;
    for (Eigen::Index label = 0; label < count; ++label) {
        const int col = step.report.assignment[static_cast<std::size_t>(label)];
        Eigen::VectorXd psi = b.snap.eigenvectors.col(col);
        if (w * prev.psi.col(label).dot(psi) < 0.0) psi = -psi;
        next.psi.col(label) = psi;
        next.lambda(label) = b.snap.eigenvalues(col);
        next.slopes(label) = b.slopes(col);
        next.residuals(label) = b.snap.residuals(col);
    }

    // A swap can be a true crossing or a sharply avoided one that the step skips
    // over; only bisection tells them apart.
    auto separated = [&](double x, double y) {
        return std::abs(x - y) > options.eps_deg * (1.0 + std::max(std::abs(x), std::abs(y)));
    };
    for (Eigen::Index i = 0; i < count && !step.order_swap; ++i) {
        for (Eigen::Index j = i + 1; j < count; ++j) {
            if (!separated(prev.lambda(i), prev.lambda(j)) || !separated(next.lambda(i), next.lambda(j))) continue;
            if ((prev.lambda(i) < prev.lambda(j)) != (next.lambda(i) < next.lambda(j))) {
                step.order_swap = true;
                break;
            }
        }
    }

    const double dt = next.t - prev.t;
    for (std::size_t label = 0; label < options.k && static_cast<Eigen::Index>(label) < count; ++label) {
        const auto l = static_cast<Eigen::Index>(label);
        const double jump = std::abs(next.lambda(l) - prev.lambda(l));
        const double bound = (std::abs(prev.slopes(l)) + std::abs(next.slopes(l)) + 1.0) * dt;
        if (jump > bound) step.discontinuous.push_back(static_cast<int>(label));
    }
    return step;
}

void record(BranchSet& set, const State& state, double quality, bool refined,
            const Eigen::VectorXd& spectrum) {
    set.t.push_back(state.t);
    set.step_quality.push_back(quality);
    set.refined.push_back(refined ? 1 : 0);
    set.spectra.push_back(spectrum);
    for (std::size_t label = 0; label < set.tracked; ++label) {
        const auto l = static_cast<Eigen::Index>(label);
        BranchNode node;
        node.t = state.t;
        node.lambda = state.lambda(l);
        node.lambda_dot_hf = state.slopes(l);
        node.residual = state.residuals(l);
        node.psi = state.psi.col(l);
        set.branches[label].push_back(std::move(node));
    }
}

Prepared solve_prepared(const MatrixFamily& family, double t, std::size_t count) {
    const Eigen::MatrixXd m = family.at(t);
    return prepare(eigendecompose(m, count, t, family.weight), family, m);
}

std::size_t tracked_count(const MatrixFamily& family, const TrackOptions& options) {
    const auto dim = static_cast<std::size_t>(family.dimension());
    if (options.k < 1 || options.k > dim) {
        throw PreconditionError("branch count " + std::to_string(options.k) +
                                " outside [1, " + std::to_string(dim) + "]");
    }
    return std::min(dim, options.k + options.guard);
}

State state_at_node(const BranchSet& set, std::size_t node) {
    State s;
    s.t = set.t[node];
    s.weight = set.weight;
    const auto count = static_cast<Eigen::Index>(set.tracked);
    s.lambda.resize(count);
    s.slopes.resize(count);
    s.residuals.resize(count);
    s.psi.resize(set.branches[0][node].psi.size(), count);
    for (Eigen::Index l = 0; l < count; ++l) {
        const auto& n = set.branches[static_cast<std::size_t>(l)][node];
        s.lambda(l) = n.lambda;
        s.slopes(l) = n.lambda_dot_hf;
        s.residuals(l) = n.residual;
        s.psi.col(l) = n.psi;
    }
    return s;
}

/// Labels that start degenerate at t_min are ranked by value at the first later
/// node where they separate; the solver's order inside the cluster is arbitrary.
void order_initial_ties(BranchSet& set, double eps_deg) {
    if (set.nodes() < 2) return;
    Eigen::VectorXd start(static_cast<Eigen::Index>(set.tracked));
    for (std::size_t l = 0; l < set.tracked; ++l) start(static_cast<Eigen::Index>(l)) = set.branches[l][0].lambda;
    for (const auto& cluster : chain_clusters(start, ascending_order(start), eps_deg)) {
        if (cluster.size() < 2) continue;
        std::vector<int> ranked = cluster;
        std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
            for (std::size_t n = 1; n < set.nodes(); ++n) {
                const double x = set.branches[static_cast<std::size_t>(a)][n].lambda;
                const double y = set.branches[static_cast<std::size_t>(b)][n].lambda;
                if (std::abs(x - y) > eps_deg * (1.0 + std::max(std::abs(x), std::abs(y)))) return x < y;
            }
            return false;
        });
        std::vector<int> slots = cluster;
        std::sort(slots.begin(), slots.end());
        std::vector<std::vector<BranchNode>> moved;
        std::vector<char> flags;
        for (int l : ranked) {
            moved.push_back(std::move(set.branches[static_cast<std::size_t>(l)]));
            flags.push_back(set.cluster_tracked[static_cast<std::size_t>(l)]);
        }
        for (std::size_t i = 0; i < slots.size(); ++i) {
            set.branches[static_cast<std::size_t>(slots[i])] = std::move(moved[i]);
            set.cluster_tracked[static_cast<std::size_t>(slots[i])] = flags[i];
        }
    }
}

}  // namespace

TGrid make_tgrid(double t_min, double t_max, std::size_t base_steps,
                 std::optional<double> min_step) {
    if (!(t_min >= 0.0)) throw PreconditionError("t_min must be nonnegative");
    if (!(t_max > t_min)) throw PreconditionError("t_max must exceed t_min");
    if (base_steps < 1) throw PreconditionError("at least one base step is required");
    TGrid grid;
    grid.base.resize(base_steps + 1);
    for (std::size_t i = 0; i <= base_steps; ++i) {
        grid.base[i] = t_min + (t_max - t_min) * static_cast<double>(i) /
                                   static_cast<double>(base_steps);
    }
    grid.base.back() = t_max;
    grid.min_step = min_step.value_or(1e-4 * (t_max - t_min));
    if (!(grid.min_step > 0.0)) throw PreconditionError("min_step must be positive");
    return grid;
}

OverlapReport overlap_matrix(const SpectrumSnapshot& a, const SpectrumSnapshot& b) {
    if (a.dimension() != b.dimension() || a.count() != b.count()) {
        throw PreconditionError("snapshots differ in dimension or pair count");
    }
    OverlapReport report;
    report.overlaps = (a.weight * a.eigenvectors.transpose() * b.eigenvectors).cwiseAbs();
    return report;
}

OverlapReport match_branches(const SpectrumSnapshot& a, const SpectrumSnapshot& b, double tau,
                             double eps_deg, std::span<const double> slopes_a,
                             std::span<const double> slopes_b,
                             std::optional<std::size_t> quality_rows) {
    OverlapReport report = overlap_matrix(a, b);
    const int k = static_cast<int>(a.count());
    const Eigen::MatrixXd& o = report.overlaps;
    const bool have_slopes = slopes_a.size() == static_cast<std::size_t>(k) &&
                             slopes_b.size() == static_cast<std::size_t>(k);

    const auto clusters_a = chain_clusters(a.eigenvalues, ascending_order(a.eigenvalues), eps_deg);
    const auto clusters_b = chain_clusters(b.eigenvalues, ascending_order(b.eigenvalues), eps_deg);
    std::vector<int> cluster_of_a(static_cast<std::size_t>(k)), cluster_of_b(static_cast<std::size_t>(k));
    for (std::size_t c = 0; c < clusters_a.size(); ++c) {
        for (int i : clusters_a[c]) cluster_of_a[static_cast<std::size_t>(i)] = static_cast<int>(c);
        if (clusters_a[c].size() > 1) report.clusters_a.push_back(clusters_a[c]);
    }
    for (std::size_t c = 0; c < clusters_b.size(); ++c) {
        for (int j : clusters_b[c]) cluster_of_b[static_cast<std::size_t>(j)] = static_cast<int>(c);
        if (clusters_b[c].size() > 1) report.clusters_b.push_back(clusters_b[c]);
    }

    // Subspace overlap between every pair of clusters.
    const Eigen::MatrixXd squared = o.cwiseProduct(o);
    Eigen::MatrixXd block_score(clusters_a.size(), clusters_b.size());
    for (std::size_t ca = 0; ca < clusters_a.size(); ++ca) {
        for (std::size_t cb = 0; cb < clusters_b.size(); ++cb) {
            double sum = 0.0;
            for (int i : clusters_a[ca]) {
                for (int j : clusters_b[cb]) sum += squared(i, j);
            }
            const double norm = static_cast<double>(std::min(clusters_a[ca].size(), clusters_b[cb].size()));
            block_score(static_cast<Eigen::Index>(ca), static_cast<Eigen::Index>(cb)) =
                std::sqrt(std::min(1.0, sum / norm));
        }
    }
    auto score = [&](int i, int j) {
        return block_score(cluster_of_a[static_cast<std::size_t>(i)],
                           cluster_of_b[static_cast<std::size_t>(j)]);
    };

    Eigen::MatrixXd cost(k, k);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) cost(i, j) = -std::log(std::max(score(i, j), kOverlapFloor));
    }
    report.assignment = solve_assignment(cost);

    // Inside matched cluster pairs, pair members by slope, then by overlap.
    double slope_scale = 1.0;
    if (have_slopes) {
        for (int i = 0; i < k; ++i) {
            slope_scale = std::max({slope_scale, 1.0 + std::abs(slopes_a[static_cast<std::size_t>(i)]),
                                    1.0 + std::abs(slopes_b[static_cast<std::size_t>(i)])});
        }
    }
    const double eta = 1e-9 * slope_scale;
    auto repair = [&](const std::vector<int>& rows) {
        if (rows.size() < 2) return;
        std::vector<int> cols;
        for (int i : rows) cols.push_back(report.assignment[static_cast<std::size_t>(i)]);
        std::sort(cols.begin(), cols.end());
        const auto m = static_cast<Eigen::Index>(rows.size());
        Eigen::MatrixXd local(m, m);
        for (Eigen::Index r = 0; r < m; ++r) {
            for (Eigen::Index c = 0; c < m; ++c) {
                const int i = rows[static_cast<std::size_t>(r)];
                const int j = cols[static_cast<std::size_t>(c)];
                const double overlap_cost = -std::log(std::max(o(i, j), 1e-12));
                const double slope_gap =
                    have_slopes ? std::abs(slopes_a[static_cast<std::size_t>(i)] -
                                           slopes_b[static_cast<std::size_t>(j)])
                                : 0.0;
                local(r, c) = have_slopes ? slope_gap + eta * overlap_cost : overlap_cost;
            }
        }
        const auto local_assignment = solve_assignment(local);
        for (Eigen::Index r = 0; r < m; ++r) {
            report.assignment[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])] =
                cols[static_cast<std::size_t>(local_assignment[static_cast<std::size_t>(r)])];
        }
    };
    // Labels entering a degenerate cluster of b, whatever their cluster in a.
    for (const auto& cb : clusters_b) {
        if (cb.size() < 2) continue;
        std::vector<int> rows;
        for (int i = 0; i < k; ++i) {
            const int j = report.assignment[static_cast<std::size_t>(i)];
            if (std::find(cb.begin(), cb.end(), j) != cb.end()) rows.push_back(i);
        }
        repair(rows);
    }
    // Members of a degenerate cluster of a, wherever they went in b.
    for (const auto& ca : clusters_a) {
        if (ca.size() >= 2) repair(ca);
    }

    const std::size_t rows = std::min<std::size_t>(quality_rows.value_or(static_cast<std::size_t>(k)),
                                                   static_cast<std::size_t>(k));
    report.assigned_overlap.resize(static_cast<std::size_t>(k));
    report.min_overlap = 1.0;
    for (int i = 0; i < k; ++i) {
        const double s = score(i, report.assignment[static_cast<std::size_t>(i)]);
        report.assigned_overlap[static_cast<std::size_t>(i)] = s;
        if (static_cast<std::size_t>(i) < rows) report.min_overlap = std::min(report.min_overlap, s);
    }
    report.ambiguous = report.min_overlap < tau;
    return report;
}

BranchSet track(const MatrixFamily& family, const TGrid& grid, const TrackOptions& options) {
    if (grid.base.size() < 2) throw PreconditionError("t grid needs at least two points");
    for (std::size_t i = 1; i < grid.base.size(); ++i) {
        if (!(grid.base[i] > grid.base[i - 1])) {
            throw PreconditionError("t grid must be strictly ascending");
        }
    }
    if (!(options.tau > 0.0 && options.tau < 1.0)) throw PreconditionError("tau must lie in (0, 1)");
    const std::size_t count = tracked_count(family, options);

    std::vector<std::optional<Prepared>> base(grid.base.size());
    parallel_for(grid.base.size(), [&](std::size_t i) {
        base[i] = solve_prepared(family, grid.base[i], count);
    });

    BranchSet set;
    set.k = options.k;
    set.tracked = count;
    set.weight = family.weight;
    set.branches.resize(count);
    set.cluster_tracked.assign(count, 0);
    set.snapshots_computed = grid.base.size();

    State state = initial_state(*base[0]);
    record(set, state, 1.0, false, base[0]->snap.eigenvalues);

    struct Target {
        double t;
        std::optional<Prepared> prepared;
        bool refined;
    };
    std::vector<Target> pending;
    for (std::size_t i = grid.base.size(); i-- > 1;) {
        pending.push_back({grid.base[i], std::move(base[i]), false});
    }

    while (!pending.empty()) {
        Target& target = pending.back();
        if (!target.prepared) {
            target.prepared = solve_prepared(family, target.t, count);
            ++set.snapshots_computed;
        }
        Step step = advance(state, *target.prepared, options);
        const bool bad = step.report.ambiguous || !step.discontinuous.empty();
        const double half = 0.5 * (target.t - state.t);
        if ((bad || step.order_swap) && half >= grid.min_step) {
            pending.push_back({state.t + half, std::nullopt, true});
            continue;
        }
        if (bad) {
            for (std::size_t label = 0; label < count; ++label) {
                if (step.report.assigned_overlap[label] < options.tau) set.cluster_tracked[label] = 1;
            }
            for (int label : step.discontinuous) set.cluster_tracked[static_cast<std::size_t>(label)] = 1;
        }
        const Eigen::VectorXd spectrum = target.prepared->snap.eigenvalues;
        const bool refined = target.refined;
        pending.pop_back();
        state = std::move(step.next);
        record(set, state, step.report.min_overlap, refined, spectrum);
    }
    order_initial_ties(set, options.eps_deg);
    return set;
}

BranchSet track(const OperatorFamily& family, const TGrid& grid, const TrackOptions& options) {
    return track(to_matrix_family(family), grid, options);
}

double hf_derivative(const MatrixFamily& family, double t, const Eigen::VectorXd& psi) {
    if (psi.size() != family.dimension()) throw PreconditionError("section has wrong dimension");
    const double norm = weighted_norm(psi, family.weight);
    if (std::abs(norm - 1.0) > 1e-8) {
        throw PreconditionError("section is not normalized (norm " + std::to_string(norm) + ")");
    }
    return weighted_quadratic_form(family.derivative(t), psi, family.weight);
}

double hf_derivative(const OperatorFamily& family, double t, const Eigen::VectorXd& psi) {
    if (psi.size() != family.dimension()) throw PreconditionError("section has wrong dimension");
    const double w = family.weight();
    const double norm = weighted_norm(psi, w);
    if (std::abs(norm - 1.0) > 1e-8) {
        throw PreconditionError("section is not normalized (norm " + std::to_string(norm) + ")");
    }
    // Block-diagonal action without assembling the full derivative.
    const auto m = static_cast<Eigen::Index>(family.rank);
    double sum = 0.0;
    for (std::size_t j = 0; j < family.grid.n_points; ++j) {
        const auto block = psi.segment(static_cast<Eigen::Index>(j) * m, m);
        const Eigen::MatrixXd d = family.field_a.values[j] + 2.0 * t * family.field_v.values[j];
        sum += block.dot(d * block);
    }
    return w * sum;
}

std::vector<HfCheck> hellmann_feynman_check(const MatrixFamily& family, const BranchSet& set,
                                            double delta, double tau,
                                            const TrackOptions& options) {
    if (!(delta > 0.0)) throw PreconditionError("finite-difference step must be positive");
    std::vector<std::size_t> nodes;
    for (std::size_t n = 0; n < set.nodes(); ++n) {
        if (set.step_quality[n] >= tau) nodes.push_back(n);
    }
    std::vector<std::vector<HfCheck>> per_node(nodes.size());
    parallel_for(nodes.size(), [&](std::size_t idx) {
        const std::size_t node = nodes[idx];
        const State state = state_at_node(set, node);
        const double t = set.t[node];
        const Step plus = advance(state, solve_prepared(family, t + delta, set.tracked), options);
        const Step minus = advance(state, solve_prepared(family, t - delta, set.tracked), options);
        for (std::size_t label = 0; label < set.k; ++label) {
            if (set.cluster_tracked[label]) continue;
            const auto l = static_cast<Eigen::Index>(label);
            HfCheck c;
            c.branch = label;
            c.t = t;
            c.hf = state.slopes(l);
            c.finite_difference = (plus.next.lambda(l) - minus.next.lambda(l)) / (2.0 * delta);
            c.relative_error = std::abs(c.hf - c.finite_difference) / (1.0 + std::abs(c.hf));
            per_node[idx].push_back(c);
        }
    });
    std::vector<HfCheck> out;
    for (auto& v : per_node) out.insert(out.end(), v.begin(), v.end());
    return out;
}

double spectrum_conservation_defect(const BranchSet& set) {
    double worst = 0.0;
    for (std::size_t n = 0; n < set.nodes(); ++n) {
        std::vector<double> values;
        for (std::size_t l = 0; l < set.tracked; ++l) values.push_back(set.branches[l][n].lambda);
        std::sort(values.begin(), values.end());
        const auto& spectrum = set.spectra[n];
        for (std::size_t i = 0; i < values.size(); ++i) {
            worst = std::max(worst, std::abs(values[i] - spectrum(static_cast<Eigen::Index>(i))));
        }
    }
    return worst;
}

double gauge_defect(const BranchSet& set) {
    double worst = 0.0;
    for (const auto& branch : set.branches) {
        for (std::size_t n = 1; n < branch.size(); ++n) {
            worst = std::max(worst, -set.weight * branch[n - 1].psi.dot(branch[n].psi));
        }
    }
    return worst;
}

}  // namespace branchlab
