#include "branchlab/branchtrack.hpp"
#include "branchlab/error.hpp"
#include "branchlab/functions.hpp"
#include "branchlab/operators.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

using namespace branchlab;

namespace {

MatrixFamily pencil(Eigen::MatrixXd c, Eigen::MatrixXd l, Eigen::MatrixXd q = {}) {
    MatrixFamily f;
    f.constant = std::move(c);
    f.linear = std::move(l);
    f.quadratic = q.size() == 0 ? Eigen::MatrixXd::Zero(f.constant.rows(), f.constant.cols()) : std::move(q);
    f.weight = 1.0;
    return f;
}

MatrixFamily crossing() {
    return pencil(Eigen::Vector2d(0, 1).asDiagonal(), Eigen::Vector2d(1, -1).asDiagonal());
}

MatrixFamily avoided(double eps) {
    Eigen::MatrixXd c(2, 2);
    c << 0, eps, eps, 1;
    return pencil(c, Eigen::Vector2d(1, -1).asDiagonal());
}

MatrixFamily triple() {
    return pencil(Eigen::Vector3d(0, 1, 0.5).asDiagonal(), Eigen::Vector3d(1, -1, 0).asDiagonal());
}

using Oracle = std::function<double(std::size_t label, double t)>;

double worst_error(const BranchSet& set, const Oracle& exact) {
    double worst = 0.0;
    for (std::size_t label = 0; label < set.k; ++label) {
        for (const auto& node : set.branch(label)) {
            worst = std::max(worst, std::abs(node.lambda - exact(label, node.t)));
        }
    }
    return worst;
}

TrackOptions options_for(std::size_t k) {
    TrackOptions o;
    o.k = k;
    return o;
}

OperatorFamily witten_cos(std::size_t n, int degree = 0) {
    const CircleGrid g = build_circle_grid(n);
    return build_witten_family(g, sample_function(g, ScalarFunction::parse("cos")), degree);
}

OperatorFamily scalar_family(std::size_t n, double a0, double v0) {
    const CircleGrid g = build_circle_grid(n);
    const std::vector<double> a(n, a0), v(n, v0);
    return make_family(g, 1, scalar_matrix_field(1, a), scalar_matrix_field(1, v), "scalar");
}

}  // namespace

TEST(TGrid, BaseAndDefaultMinStep) {
    const TGrid g = make_tgrid(0, 2, 8);
    ASSERT_EQ(g.base.size(), 9u);
    EXPECT_DOUBLE_EQ(g.base[4], 1.0);
    EXPECT_DOUBLE_EQ(g.base.back(), 2.0);
    EXPECT_DOUBLE_EQ(g.min_step, 2e-4);
    EXPECT_THROW(make_tgrid(1, 1, 8), PreconditionError);
    EXPECT_THROW(make_tgrid(-1, 1, 8), PreconditionError);
}

TEST(OverlapMatrix, IdenticalSwappedAndRotated) {
    SpectrumSnapshot a;
    a.eigenvalues = Eigen::Vector2d(1, 2);
    a.eigenvectors = Eigen::MatrixXd::Identity(2, 2);
    const auto same = overlap_matrix(a, a);
    EXPECT_EQ(same.overlaps, Eigen::MatrixXd::Identity(2, 2));

    SpectrumSnapshot swapped = a;
    swapped.eigenvectors.col(0).swap(swapped.eigenvectors.col(1));
    Eigen::MatrixXd anti(2, 2);
    anti << 0, 1, 1, 0;
    EXPECT_EQ(overlap_matrix(a, swapped).overlaps, anti);

    SpectrumSnapshot rotated = a;
    const double c = std::sqrt(0.5);
    rotated.eigenvectors << c, -c, c, c;
    EXPECT_LT((overlap_matrix(a, rotated).overlaps - Eigen::MatrixXd::Constant(2, 2, c)).cwiseAbs().maxCoeff(),
              1e-15);
}

TEST(MatchBranches, IdenticalSnapshotsGiveIdentity) {
    SpectrumSnapshot a;
    a.eigenvalues = Eigen::Vector3d(1, 2, 3);
    a.eigenvectors = Eigen::MatrixXd::Identity(3, 3);
    const auto r = match_branches(a, a, 0.75);
    EXPECT_EQ(r.assignment, (std::vector<int>{0, 1, 2}));
    EXPECT_DOUBLE_EQ(r.min_overlap, 1.0);
    EXPECT_FALSE(r.ambiguous);
}

TEST(MatchBranches, FollowsEigenvectorsThroughCrossing) {
    SpectrumSnapshot before, after;
    before.eigenvalues = Eigen::Vector2d(0.45, 0.55);
    before.eigenvectors = Eigen::MatrixXd::Identity(2, 2);
    after.eigenvalues = Eigen::Vector2d(0.45, 0.55);
    after.eigenvectors.resize(2, 2);
    after.eigenvectors << 0, 1, 1, 0;
    const auto r = match_branches(before, after, 0.75);
    EXPECT_EQ(r.assignment, (std::vector<int>{1, 0}));
}

TEST(MatchBranches, AmbiguityFlag) {
    SpectrumSnapshot a, b;
    a.eigenvalues = Eigen::Vector2d(1, 2);
    a.eigenvectors = Eigen::MatrixXd::Identity(2, 2);
    b.eigenvalues = Eigen::Vector2d(1, 2);
    const double c = std::sqrt(0.5);
    b.eigenvectors.resize(2, 2);
    b.eigenvectors << c, -c, c, c;
    EXPECT_TRUE(match_branches(a, b, 0.75).ambiguous);
}

TEST(MatchBranches, DegenerateClusterMatchedAsSubspace) {
    // A rotated basis of a degenerate pair is one cluster: subspace overlap 1.
    SpectrumSnapshot a, b;
    a.eigenvalues = Eigen::Vector3d(1, 1, 2);
    a.eigenvectors = Eigen::MatrixXd::Identity(3, 3);
    b = a;
    const double c = std::sqrt(0.5);
    b.eigenvectors.topLeftCorner(2, 2) << c, -c, c, c;
    const auto r = match_branches(a, b, 0.75);
    EXPECT_FALSE(r.ambiguous);
    EXPECT_EQ(r.assignment[2], 2);
    ASSERT_EQ(r.clusters_a.size(), 1u);
}

TEST(Track, DiagonalCrossingOracle) {
    for (std::size_t steps : {20u, 21u}) {
        const auto set = track(crossing(), make_tgrid(0, 1, steps), options_for(2));
        const double err = worst_error(set, [](std::size_t l, double t) { return l == 0 ? t : 1 - t; });
        EXPECT_LE(err, 1e-8) << steps;
        EXPECT_EQ(set.cluster_tracked, (std::vector<char>{0, 0}));
    }
}

TEST(Track, AvoidedCrossingOracle) {
    const double eps = 1e-3;
    for (std::size_t steps : {20u, 21u}) {
        const auto set = track(avoided(eps), make_tgrid(0, 1, steps), options_for(2));
        const double err = worst_error(set, [&](std::size_t l, double t) {
            const double r = std::sqrt((t - 0.5) * (t - 0.5) + eps * eps);
            return l == 0 ? 0.5 - r : 0.5 + r;
        });
        EXPECT_LE(err, 1e-8) << steps;
    }
}

TEST(Track, TripleCrossingOracle) {
    for (std::size_t steps : {20u, 21u}) {
        const auto set = track(triple(), make_tgrid(0, 1, steps), options_for(3));
        const double err = worst_error(set, [](std::size_t l, double t) {
            return l == 0 ? t : (l == 1 ? 0.5 : 1 - t);
        });
        EXPECT_LE(err, 1e-8) << steps;
    }
}

TEST(Track, InitialTiesRankedByLaterOrder) {
    // Degenerate at t = 0 with equal slopes; only the t^2 term separates them.
    const double c = std::cos(0.3), s = std::sin(0.3);
    Eigen::Matrix2d r;
    r << c, -s, s, c;
    const Eigen::MatrixXd q = r * Eigen::Vector2d(2, 1).asDiagonal() * r.transpose();
    const auto set = track(pencil(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(2, 2), q),
                           make_tgrid(0, 2, 8), options_for(2));
    const double err = worst_error(set, [](std::size_t l, double t) { return 1 + (l == 0 ? 1 : 2) * t * t; });
    EXPECT_LE(err, 1e-12);
}

TEST(Track, RefinementStability) {
    for (const auto& family : {crossing(), avoided(1e-3), triple()}) {
        const std::size_t k = static_cast<std::size_t>(family.dimension());
        const auto coarse = track(family, make_tgrid(0, 1, 21), options_for(k));
        const auto fine = track(family, make_tgrid(0, 1, 42), options_for(k));
        for (std::size_t n = 0; n < coarse.nodes(); ++n) {
            const double t = coarse.t[n];
            const auto it = std::find(fine.t.begin(), fine.t.end(), t);
            if (it == fine.t.end()) continue;
            const auto m = static_cast<std::size_t>(it - fine.t.begin());
            for (std::size_t l = 0; l < k; ++l) {
                EXPECT_EQ(coarse.branch(l)[n].lambda, fine.branch(l)[m].lambda) << "t=" << t << " label " << l;
            }
        }
    }
}

TEST(Track, ConstantFamilyKeepsIdentity) {
    const auto fam = scalar_family(32, 0.0, 0.0);
    const auto set = track(fam, make_tgrid(0, 5, 10), options_for(5));
    for (std::size_t l = 0; l < set.tracked; ++l) {
        for (const auto& node : set.branch(l)) EXPECT_EQ(node.lambda, set.branch(l).front().lambda);
    }
    for (double q : set.step_quality) EXPECT_NEAR(q, 1.0, 1e-12);
}

TEST(Track, ScalarConstantPotentialIsExact) {
    const double v0 = 0.7;
    const auto fam = scalar_family(64, 0.0, v0);
    const auto set = track(fam, make_tgrid(0, 10, 16), options_for(6));
    for (std::size_t l = 0; l < set.k; ++l) {
        const double lambda0 = set.branch(l).front().lambda;
        for (const auto& node : set.branch(l)) {
            EXPECT_NEAR(node.lambda, lambda0 + v0 * node.t * node.t, 1e-8 * (1 + node.lambda));
            EXPECT_NEAR(node.lambda_dot_hf, 2 * node.t * v0, 1e-9 * (1 + node.t));
        }
    }
}

TEST(Track, WittenCosSweepIsConsistent) {
    const auto fam = witten_cos(256);
    TrackOptions opts = options_for(6);
    const auto set = track(fam, make_tgrid(0, 40, 80), opts);
    EXPECT_LE(spectrum_conservation_defect(set), 1e-10);
    EXPECT_LE(gauge_defect(set), 0.0);
    for (std::size_t n = 1; n < set.nodes(); ++n) EXPECT_GE(set.step_quality[n], opts.tau) << set.t[n];
    for (char c : set.cluster_tracked) EXPECT_EQ(c, 0);

    // Independent per-t eigendecomposition.
    for (std::size_t n = 0; n < set.nodes(); n += 7) {
        const auto snap = eigendecompose(assemble(fam, set.t[n]), set.tracked, set.t[n], fam.weight());
        std::vector<double> values;
        for (std::size_t l = 0; l < set.tracked; ++l) values.push_back(set.branch(l)[n].lambda);
        std::sort(values.begin(), values.end());
        for (std::size_t i = 0; i < values.size(); ++i) {
            EXPECT_NEAR(values[i], snap.eigenvalues(static_cast<Eigen::Index>(i)),
                        1e-10 * (1 + std::abs(values[i])));
        }
    }

    // Continuity at the resolved scale.
    for (std::size_t l = 0; l < set.k; ++l) {
        const auto& b = set.branch(l);
        for (std::size_t n = 1; n < b.size(); ++n) {
            const double bound = (std::abs(b[n - 1].lambda_dot_hf) + std::abs(b[n].lambda_dot_hf) + 1) *
                                 (b[n].t - b[n - 1].t);
            EXPECT_LE(std::abs(b[n].lambda - b[n - 1].lambda), bound);
        }
    }
}

TEST(Track, DeterministicAcrossRuns) {
    const auto fam = witten_cos(64);
    const auto a = track(fam, make_tgrid(0, 10, 20), options_for(4));
    const auto b = track(fam, make_tgrid(0, 10, 20), options_for(4));
    ASSERT_EQ(a.t, b.t);
    for (std::size_t l = 0; l < a.tracked; ++l) {
        for (std::size_t n = 0; n < a.nodes(); ++n) {
            EXPECT_EQ(a.branch(l)[n].lambda, b.branch(l)[n].lambda);
            EXPECT_EQ(a.branch(l)[n].psi, b.branch(l)[n].psi);
        }
    }
}

TEST(Track, RejectsBadOptions) {
    EXPECT_THROW(track(crossing(), make_tgrid(0, 1, 10), options_for(3)), PreconditionError);
    TrackOptions bad = options_for(2);
    bad.tau = 1.5;
    EXPECT_THROW(track(crossing(), make_tgrid(0, 1, 10), bad), PreconditionError);
}

TEST(HfDerivative, ScalarExamples) {
    const auto v_only = scalar_family(16, 0.0, 1.5);
    const auto a_only = scalar_family(16, -0.3, 0.0);
    std::mt19937 rng(1);
    std::normal_distribution<double> dist;
    Eigen::VectorXd psi(16);
    for (auto& x : psi) x = dist(rng);
    psi /= std::sqrt(v_only.weight() * psi.squaredNorm());
    EXPECT_NEAR(hf_derivative(v_only, 2.0, psi), 2 * 2.0 * 1.5, 1e-12);
    EXPECT_NEAR(hf_derivative(a_only, 7.0, psi), -0.3, 1e-12);
    EXPECT_THROW(hf_derivative(v_only, 1.0, Eigen::VectorXd(2 * psi)), PreconditionError);
}

TEST(HfDerivative, MatchesFiniteDifferences) {
    const auto fam = witten_cos(64);
    const MatrixFamily mf = to_matrix_family(fam);
    TrackOptions opts = options_for(4);
    const auto set = track(mf, make_tgrid(0, 6, 12), opts);
    const auto checks = hellmann_feynman_check(mf, set, 1e-3, opts.tau, opts);
    ASSERT_FALSE(checks.empty());
    for (const auto& c : checks) EXPECT_LE(c.relative_error, 1e-4) << "branch " << c.branch << " t " << c.t;
}
