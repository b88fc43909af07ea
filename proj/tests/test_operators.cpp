#include "branchlab/eigensolve.hpp"
#include "branchlab/error.hpp"
#include "branchlab/functions.hpp"
#include "branchlab/linalg.hpp"
#include "branchlab/operators.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace branchlab;

namespace {

constexpr double pi = std::numbers::pi;

Eigen::VectorXd sorted_eigenvalues(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

OperatorFamily scalar_family(std::size_t n, double a0, double v0, std::size_t rank = 1) {
    const CircleGrid grid = build_circle_grid(n);
    const std::vector<double> a(n, a0), v(n, v0);
    return make_family(grid, rank, scalar_matrix_field(rank, a), scalar_matrix_field(rank, v), "scalar");
}

}  // namespace

TEST(Functions, VocabularyValues) {
    const double x = 0.7;
    EXPECT_DOUBLE_EQ(ScalarFunction::parse("zero").value(x), 0.0);
    EXPECT_NEAR(ScalarFunction::parse("cos").value(x), std::cos(x), 1e-15);
    EXPECT_NEAR(ScalarFunction::parse("sin2").value(x), std::sin(x) * std::sin(x), 1e-15);
    EXPECT_DOUBLE_EQ(ScalarFunction::parse("const:2.5").value(x), 2.5);
    EXPECT_NEAR(ScalarFunction::parse("cos_shift:0.3").value(x), std::cos(x - 0.3), 1e-15);
    EXPECT_NEAR(ScalarFunction::parse("poly_trig:1,2,3,4").value(x),
                1 + 2 * std::cos(x) + 3 * std::sin(x) + 4 * std::cos(2 * x), 1e-14);
}

TEST(Functions, AnalyticDerivatives) {
    const auto f = ScalarFunction::parse("sin2");
    for (double x : {0.0, 0.4, 2.0, 5.5}) {
        EXPECT_NEAR(f.derivative(x, 1), std::sin(2 * x), 1e-14);
        EXPECT_NEAR(f.derivative(x, 2), 2 * std::cos(2 * x), 1e-14);
    }
    const auto g = ScalarFunction::parse("cos_shift:1.1");
    EXPECT_NEAR(g.derivative(0.2, 1), -std::sin(0.2 - 1.1), 1e-15);
    EXPECT_NEAR(g.derivative(0.2, 3), std::sin(0.2 - 1.1), 1e-15);
}

TEST(Functions, RejectsUnknownAndMalformed) {
    EXPECT_THROW(ScalarFunction::parse("tan"), PreconditionError);
    EXPECT_THROW(ScalarFunction::parse("const:"), PreconditionError);
    EXPECT_THROW(ScalarFunction::parse("const:1x"), PreconditionError);
    EXPECT_THROW(ScalarFunction::parse("poly_trig:1,2,3"), PreconditionError);
    EXPECT_TRUE(ScalarFunction::parse("const:3").is_constant());
    EXPECT_FALSE(ScalarFunction::parse("cos").is_constant());
}

TEST(CircleGrid, EightPoints) {
    const CircleGrid g = build_circle_grid(8);
    EXPECT_DOUBLE_EQ(g.spacing, pi / 4);
    ASSERT_EQ(g.points.size(), 8u);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(g.points[j], j * pi / 4, 1e-15);
    EXPECT_NEAR(g.spacing * 8, 2 * pi, 1e-15);
}

TEST(CircleGrid, Spacing512) {
    EXPECT_NEAR(build_circle_grid(512).spacing, 0.012271846303085129, 1e-17);
}

TEST(CircleGrid, RejectsCoarseGrids) {
    EXPECT_THROW(build_circle_grid(4), SizingError);
    EXPECT_THROW(build_circle_grid(7), SizingError);
}

TEST(Laplacian, FourPointSpectrum) {
    const Eigen::VectorXd ev = sorted_eigenvalues(periodic_laplacian(4, 1));
    const double unit = 8.0 / (pi * pi);
    EXPECT_NEAR(ev(0), 0.0, 1e-12);
    EXPECT_NEAR(ev(1), unit, 1e-12);
    EXPECT_NEAR(ev(2), unit, 1e-12);
    EXPECT_NEAR(ev(3), 2 * unit, 1e-12);
}

TEST(Laplacian, CirculantSpectrumMatchesFourierFormula) {
    const std::size_t n = 32;
    const double h = 2 * pi / n;
    std::vector<double> expected;
    for (std::size_t k = 0; k < n; ++k) expected.push_back(2.0 / (h * h) * (1 - std::cos(2 * pi * k / n)));
    std::sort(expected.begin(), expected.end());
    const Eigen::VectorXd ev = sorted_eigenvalues(build_laplacian(build_circle_grid(n), 1));
    for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(ev(k), expected[k], 1e-10);
}

TEST(Laplacian, ConstantSectionsInKernel) {
    for (std::size_t m : {1u, 2u, 3u}) {
        const Eigen::MatrixXd lap = build_laplacian(build_circle_grid(16), m);
        EXPECT_LT(lap.rowwise().sum().cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_EQ(max_asymmetry(lap), 0.0);
        EXPECT_GE(sorted_eigenvalues(lap)(0), -1e-10);
    }
}

TEST(Laplacian, RankTwoDoublesMultiplicity) {
    const CircleGrid g = build_circle_grid(8);
    const Eigen::VectorXd one = sorted_eigenvalues(build_laplacian(g, 1));
    const Eigen::VectorXd two = sorted_eigenvalues(build_laplacian(g, 2));
    for (Eigen::Index i = 0; i < one.size(); ++i) {
        EXPECT_NEAR(two(2 * i), one(i), 1e-10);
        EXPECT_NEAR(two(2 * i + 1), one(i), 1e-10);
    }
}

TEST(MatrixField, SamplesScalarRule) {
    const CircleGrid g = build_circle_grid(16);
    const MatrixField f = sample_matrix_field(g, 1, [](double x) {
        return Eigen::MatrixXd::Constant(1, 1, std::sin(x) * std::sin(x));
    });
    for (std::size_t j = 0; j < 16; ++j) EXPECT_DOUBLE_EQ(f.values[j](0, 0), std::pow(std::sin(g.points[j]), 2));
    EXPECT_TRUE(f.is_scalar());
}

TEST(MatrixField, IdentityRuleIsConstant) {
    const MatrixField f = sample_matrix_field(build_circle_grid(8), 3, [](double) {
        return Eigen::MatrixXd::Identity(3, 3);
    });
    for (const auto& v : f.values) EXPECT_EQ(v, Eigen::MatrixXd::Identity(3, 3));
    EXPECT_DOUBLE_EQ(f.max_spectral_norm(), 1.0);
}

TEST(MatrixField, RotationConjugatedEigenvalues) {
    const CircleGrid g = build_circle_grid(64);
    const MatrixField f = sample_matrix_field(g, 2, [](double x) {
        Eigen::Matrix2d r;
        r << std::cos(x), -std::sin(x), std::sin(x), std::cos(x);
        const Eigen::Matrix2d d = Eigen::Vector2d(std::sin(x) * std::sin(x), 2 + std::cos(x)).asDiagonal();
        return Eigen::MatrixXd(r * d * r.transpose());
    });
    EXPECT_FALSE(f.is_scalar());
    for (std::size_t j = 0; j < g.n_points; ++j) {
        const double x = g.points[j];
        const Eigen::VectorXd ev = sorted_eigenvalues(f.values[j]);
        EXPECT_NEAR(ev(0), std::sin(x) * std::sin(x), 1e-13);
        EXPECT_NEAR(ev(1), 2 + std::cos(x), 1e-13);
    }
}

TEST(MatrixField, RejectsAsymmetricGenerator) {
    EXPECT_THROW(sample_matrix_field(build_circle_grid(8), 2,
                                     [](double) {
                                         Eigen::MatrixXd m(2, 2);
                                         m << 1, 1e-6, 0, 1;
                                         return m;
                                     }),
                 PreconditionError);
}

TEST(FunctionSamples, DerivativesAgreeWithFiniteDifferences) {
    const CircleGrid g = build_circle_grid(128);
    for (const char* name : {"cos", "sin2", "poly_trig:0.5,1,-2,0.7", "cos_shift:0.4"}) {
        const auto s = sample_function(g, ScalarFunction::parse(name));
        const auto d1 = periodic_centered_difference(s.values, g.spacing);
        const auto d2 = periodic_centered_difference(s.d1, g.spacing);
        double scale = 0.0;
        for (double v : s.values) scale = std::max(scale, std::abs(v));
        const double tol = 10 * g.spacing * g.spacing * scale;
        for (std::size_t j = 0; j < g.n_points; ++j) {
            EXPECT_NEAR(d1[j], s.d1[j], tol) << name;
            EXPECT_NEAR(d2[j], s.d2[j], 4 * tol) << name;
        }
    }
}

TEST(Assemble, ZeroReturnsLaplacianBitwise) {
    const auto fam = build_witten_family(build_circle_grid(32),
                                         sample_function(build_circle_grid(32), ScalarFunction::parse("cos")), 0);
    EXPECT_EQ(assemble(fam, 0.0), fam.laplacian);
}

TEST(Assemble, IdentityPotential) {
    const auto fam = scalar_family(16, 0.0, 1.0);
    const Eigen::MatrixXd expected = fam.laplacian + 9.0 * Eigen::MatrixXd::Identity(16, 16);
    EXPECT_LT((assemble(fam, 3.0) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Assemble, WittenCosAtOne) {
    const CircleGrid g = build_circle_grid(24);
    const auto fam = build_witten_family(g, sample_function(g, ScalarFunction::parse("cos")), 0);
    Eigen::MatrixXd expected = fam.laplacian;
    for (std::size_t j = 0; j < g.n_points; ++j) {
        const double x = g.points[j];
        expected(j, j) += std::sin(x) * std::sin(x) + std::cos(x);
    }
    EXPECT_LT((assemble(fam, 1.0) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Assemble, DerivativeExamples) {
    const auto fam = scalar_family(16, 0.0, 1.0);
    EXPECT_LT((assemble_derivative(fam, 5.0) - 10.0 * Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff(),
              1e-15);
    const auto fam_a = scalar_family(16, 0.7, 2.0);
    EXPECT_EQ(assemble_derivative(fam_a, 0.0), block_diagonal(fam_a.field_a));
}

TEST(Assemble, PolynomialConsistencyAndSymmetry) {
    const CircleGrid g = build_circle_grid(16);
    const MatrixField a = sample_matrix_field(g, 2, [](double x) {
        Eigen::MatrixXd m(2, 2);
        m << std::cos(x), 0.3 * std::sin(x), 0.3 * std::sin(x), -1.0;
        return m;
    });
    const MatrixField v = sample_matrix_field(g, 2, [](double x) {
        Eigen::MatrixXd m(2, 2);
        m << 1 + std::sin(x), 0.2, 0.2, 2.0;
        return m;
    });
    const auto fam = make_family(g, 2, a, v, "mixed");
    const Eigen::MatrixXd ba = block_diagonal(fam.field_a), bv = block_diagonal(fam.field_v);
    for (auto [t0, t1] : {std::pair{0.0, 1.5}, std::pair{2.0, 7.25}, std::pair{3.0, -1.0}}) {
        const Eigen::MatrixXd diff = assemble(fam, t1) - assemble(fam, t0);
        const Eigen::MatrixXd expected = (t1 - t0) * ba + (t1 * t1 - t0 * t0) * bv;
        EXPECT_LT((diff - expected).cwiseAbs().maxCoeff(), 1e-12 * (1 + t1 * t1));
        EXPECT_LE(max_asymmetry(assemble(fam, t1)), 1e-12);
    }
    for (double eps : {1e-1, 1e-3}) {
        const double t = 2.0;
        const Eigen::MatrixXd fd = (assemble(fam, t + eps) - assemble(fam, t - eps)) / (2 * eps);
        EXPECT_LT((fd - assemble_derivative(fam, t)).cwiseAbs().maxCoeff(), 1e-9 / eps);
    }
}

TEST(Witten, FieldsForCos) {
    const CircleGrid g = build_circle_grid(32);
    const auto f = sample_function(g, ScalarFunction::parse("cos"));
    const auto d0 = build_witten_family(g, f, 0);
    const auto d1 = build_witten_family(g, f, 1);
    for (std::size_t j = 0; j < g.n_points; ++j) {
        const double x = g.points[j];
        EXPECT_NEAR(d0.field_v.values[j](0, 0), std::sin(x) * std::sin(x), 1e-15);
        EXPECT_NEAR(d0.field_a.values[j](0, 0), std::cos(x), 1e-15);
        EXPECT_NEAR(d1.field_a.values[j](0, 0), -std::cos(x), 1e-15);
    }
    ASSERT_TRUE(d0.scalar_potential.has_value());
    EXPECT_NEAR(d0.scalar_potential->d1[3], std::sin(2 * g.points[3]), 1e-14);
    EXPECT_THROW(build_witten_family(g, f, 2), PreconditionError);
}

TEST(Witten, ConstantFunctionGivesConstantFamily) {
    const CircleGrid g = build_circle_grid(16);
    const auto fam = build_witten_family(g, sample_function(g, ScalarFunction::parse("const:3")), 0);
    EXPECT_EQ(assemble(fam, 5.0), fam.laplacian);
}

TEST(Witten, NearSupersymmetry) {
    const CircleGrid g = build_circle_grid(256);
    const auto f = sample_function(g, ScalarFunction::parse("cos_shift:0.3"));
    const auto d0 = build_witten_family(g, f, 0);
    const auto d1 = build_witten_family(g, f, 1);
    double fmax = 1.0;
    for (double d : f.d1) fmax = std::max(fmax, d * d);
    for (double t : {2.0, 10.0}) {
        const auto s0 = eigendecompose(assemble(d0, t), 8, t, d0.weight());
        const auto s1 = eigendecompose(assemble(d1, t), 8, t, d1.weight());
        const double tol = 50 * g.spacing * g.spacing * (1 + t * t) * fmax;
        for (int i = 1; i < 8; ++i) EXPECT_NEAR(s0.eigenvalues(i), s1.eigenvalues(i), tol);
    }
}

TEST(ValidityHorizon, PointsPerWell) {
    const CircleGrid g = build_circle_grid(512);
    EXPECT_NEAR(validity_horizon(g), 1.0 / std::pow(8 * g.spacing, 2), 1e-12);
    EXPECT_NEAR(validity_horizon(build_circle_grid(128)), 6.48456, 1e-4);
}

TEST(MakeFamily, RejectsMismatchedField) {
    const CircleGrid g = build_circle_grid(16);
    const std::vector<double> short_values(8, 1.0), values(16, 1.0);
    EXPECT_THROW(make_family(g, 1, scalar_matrix_field(1, values), scalar_matrix_field(1, short_values), "x"),
                 PreconditionError);
}
