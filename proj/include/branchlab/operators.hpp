#pragma once

#include "branchlab/functions.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace branchlab {

/// Uniform periodic grid x_j = j * spacing on [0, 2*pi).
struct CircleGrid {
    std::size_t n_points = 0;
    double spacing = 0.0;
    std::vector<double> points;
};

/// Rejects n < 8 with SizingError.
CircleGrid build_circle_grid(std::size_t n);

/// Per-grid-point symmetric rank x rank matrices (a section of End(E)).
struct MatrixField {
    std::size_t rank = 1;
    std::vector<Eigen::MatrixXd> values;

    std::size_t size() const noexcept { return values.size(); }
    /// sup over grid points of the spectral norm.
    double max_spectral_norm() const;
    /// True when every value is a multiple of the identity.
    bool is_scalar(double tol = 1e-12) const;
    /// Diagonal entry (0,0) at each point; meaningful when is_scalar().
    std::vector<double> scalar_values() const;
};

using MatrixRule = std::function<Eigen::MatrixXd(double x)>;

/// Samples `rule` at the grid points and symmetrizes. Rejects asymmetry above 1e-8.
MatrixField sample_matrix_field(const CircleGrid& grid, std::size_t rank, const MatrixRule& rule);

/// v(x_j) * identity.
MatrixField scalar_matrix_field(std::size_t rank, std::span<const double> values);

/// A scalar function with its first two derivatives at the grid points.
struct ScalarFunctionSamples {
    std::vector<double> values;
    std::vector<double> d1;
    std::vector<double> d2;
};

ScalarFunctionSamples sample_function(const CircleGrid& grid, const ScalarFunction& f);

/// Tabulated values; derivatives from periodic centered differences.
ScalarFunctionSamples samples_from_table(const CircleGrid& grid, std::vector<double> values);

/// Periodic centered difference of `values` with spacing h.
std::vector<double> periodic_centered_difference(std::span<const double> values, double h);

/// Dense quadratic matrix pencil M(t) = constant + t*linear + t^2*quadratic with a
/// weighted inner product. Everything downstream of operator assembly works on this.
struct MatrixFamily {
    Eigen::MatrixXd constant;
    Eigen::MatrixXd linear;
    Eigen::MatrixXd quadratic;
    double weight = 1.0;

    Eigen::Index dimension() const noexcept { return constant.rows(); }
    Eigen::MatrixXd at(double t) const;
    Eigen::MatrixXd derivative(double t) const;
};

/// Discretized Delta_t = Delta + t A + t^2 V on the circle with a rank-m bundle.
/// Index layout is point-major: entry (j * rank + c) is coordinate c at x_j.
struct OperatorFamily {
    CircleGrid grid;
    std::size_t rank = 1;
    Eigen::MatrixXd laplacian;
    MatrixField field_a;
    MatrixField field_v;
    std::string label;
    /// v, v', v'' when V = v * id; required by the gradient localization diagnostics.
    std::optional<ScalarFunctionSamples> scalar_potential;

    double weight() const noexcept { return grid.spacing; }
    Eigen::Index dimension() const noexcept { return laplacian.rows(); }
};

/// (1/h^2)(-1, 2, -1) with wraparound, blockwise over `rank` coordinates, h = 2*pi/n.
/// Accepts n >= 3 so that tiny closed-form checks remain possible.
Eigen::MatrixXd periodic_laplacian(std::size_t n_points, std::size_t rank);

Eigen::MatrixXd build_laplacian(const CircleGrid& grid, std::size_t rank);

/// Validates field sizes and symmetry, then builds the Laplacian.
OperatorFamily make_family(const CircleGrid& grid, std::size_t rank, MatrixField field_a,
                           MatrixField field_v, std::string label,
                           std::optional<ScalarFunctionSamples> scalar_potential = std::nullopt);

/// laplacian + t blockdiag(A) + t^2 blockdiag(V). Returns the laplacian unchanged at t = 0.
Eigen::MatrixXd assemble(const OperatorFamily& family, double t);

/// blockdiag(A) + 2t blockdiag(V).
Eigen::MatrixXd assemble_derivative(const OperatorFamily& family, double t);

Eigen::MatrixXd block_diagonal(const MatrixField& field);

MatrixFamily to_matrix_family(const OperatorFamily& family);

/// Witten Laplacian of f on functions (degree 0) or one-forms (degree 1) in
/// Weitzenboeck form: V = (f')^2, A = -f'' (degree 0) or +f'' (degree 1).
OperatorFamily build_witten_family(const CircleGrid& grid, const ScalarFunctionSamples& f,
                                   int degree);

/// Largest t whose localized eigensections (width ~ t^{-1/2}) still span
/// `points_per_well` grid points: (points_per_well * h)^{-2}.
double validity_horizon(const CircleGrid& grid, double points_per_well = 8.0);

}  // namespace branchlab
