#include "branchlab/operators.hpp"

#include "branchlab/error.hpp"
#include "branchlab/linalg.hpp"

#include <cmath>
#include <numbers>

namespace branchlab {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void check_field(const MatrixField& field, const CircleGrid& grid, std::size_t rank,
                 const char* name) {
    if (field.rank != rank) {
        throw PreconditionError(std::string("field ") + name + " has rank " +
                                std::to_string(field.rank) + ", expected " +
                                std::to_string(rank));
    }
    if (field.values.size() != grid.n_points) {
        throw PreconditionError(std::string("field ") + name + " has " +
                                std::to_string(field.values.size()) + " samples, grid has " +
                                std::to_string(grid.n_points));
    }
    for (const auto& m : field.values) {
        if (m.rows() != static_cast<Eigen::Index>(rank) ||
            m.cols() != static_cast<Eigen::Index>(rank)) {
            throw PreconditionError(std::string("field ") + name + " has a malformed sample");
        }
        if (max_asymmetry(m) > 1e-12) {
            throw PreconditionError(std::string("field ") + name + " is not symmetric");
        }
    }
}

void add_blocks(Eigen::MatrixXd& out, const MatrixField& field, double scale) {
    const auto m = static_cast<Eigen::Index>(field.rank);
    for (std::size_t j = 0; j < field.values.size(); ++j) {
        const auto offset = static_cast<Eigen::Index>(j) * m;
        out.block(offset, offset, m, m) += scale * field.values[j];
    }
}

}  // namespace

CircleGrid build_circle_grid(std::size_t n) {
    if (n < 8) {
        throw SizingError("circle grid needs at least 8 points, got " + std::to_string(n));
    }
    CircleGrid grid;
    grid.n_points = n;
    grid.spacing = kTwoPi / static_cast<double>(n);
    grid.points.resize(n);
    for (std::size_t j = 0; j < n; ++j) grid.points[j] = static_cast<double>(j) * grid.spacing;
    return grid;
}

double MatrixField::max_spectral_norm() const {
    double sup = 0.0;
    for (const auto& m : values) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        sup = std::max(sup, es.eigenvalues().cwiseAbs().maxCoeff());
    }
    return sup;
}

bool MatrixField::is_scalar(double tol) const {
    for (const auto& m : values) {
        const double d = m(0, 0);
        const Eigen::MatrixXd diff = m - d * Eigen::MatrixXd::Identity(m.rows(), m.cols());
        if (diff.cwiseAbs().maxCoeff() > tol) return false;
    }
    return true;
}

std::vector<double> MatrixField::scalar_values() const {
    std::vector<double> out;
    out.reserve(values.size());
    for (const auto& m : values) out.push_back(m(0, 0));
    return out;
}

MatrixField sample_matrix_field(const CircleGrid& grid, std::size_t rank, const MatrixRule& rule) {
    if (rank == 0) throw PreconditionError("bundle rank must be positive");
    MatrixField field;
    field.rank = rank;
    field.values.reserve(grid.n_points);
    const auto m = static_cast<Eigen::Index>(rank);
    for (double x : grid.points) {
        Eigen::MatrixXd b = rule(x);
        if (b.rows() != m || b.cols() != m) {
            throw PreconditionError("matrix rule returned a " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + " matrix, expected rank " +
                                    std::to_string(rank));
        }
        const double asym = max_asymmetry(b);
        if (asym > 1e-8) {
            throw PreconditionError("matrix rule is not symmetric at x = " + std::to_string(x) +
                                    " (asymmetry " + std::to_string(asym) + ")");
        }
        field.values.emplace_back(0.5 * (b + b.transpose()));
    }
    return field;
}

MatrixField scalar_matrix_field(std::size_t rank, std::span<const double> values) {
    if (rank == 0) throw PreconditionError("bundle rank must be positive");
    MatrixField field;
    field.rank = rank;
    field.values.reserve(values.size());
    const auto m = static_cast<Eigen::Index>(rank);
    for (double v : values) field.values.emplace_back(v * Eigen::MatrixXd::Identity(m, m));
    return field;
}

ScalarFunctionSamples sample_function(const CircleGrid& grid, const ScalarFunction& f) {
    ScalarFunctionSamples s;
    s.values.reserve(grid.n_points);
    s.d1.reserve(grid.n_points);
    s.d2.reserve(grid.n_points);
    for (double x : grid.points) {
        s.values.push_back(f.derivative(x, 0));
        s.d1.push_back(f.derivative(x, 1));
        s.d2.push_back(f.derivative(x, 2));
    }
    return s;
}

std::vector<double> periodic_centered_difference(std::span<const double> values, double h) {
    const std::size_t n = values.size();
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = (values[(j + 1) % n] - values[(j + n - 1) % n]) / (2.0 * h);
    }
    return out;
}

ScalarFunctionSamples samples_from_table(const CircleGrid& grid, std::vector<double> values) {
    if (values.size() != grid.n_points) {
        throw PreconditionError("table has " + std::to_string(values.size()) +
                                " values, grid has " + std::to_string(grid.n_points));
    }
    ScalarFunctionSamples s;
    s.values = std::move(values);
    s.d1 = periodic_centered_difference(s.values, grid.spacing);
    // Second derivative from the compact three-point stencil.
    const std::size_t n = grid.n_points;
    const double h2 = grid.spacing * grid.spacing;
    s.d2.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        s.d2[j] = (s.values[(j + 1) % n] - 2.0 * s.values[j] + s.values[(j + n - 1) % n]) / h2;
    }
    return s;
}

Eigen::MatrixXd MatrixFamily::at(double t) const {
    if (t == 0.0) return constant;
    return constant + t * linear + (t * t) * quadratic;
}

Eigen::MatrixXd MatrixFamily::derivative(double t) const { return linear + (2.0 * t) * quadratic; }

Eigen::MatrixXd periodic_laplacian(std::size_t n_points, std::size_t rank) {
    if (n_points < 3) throw SizingError("periodic stencil needs at least 3 points");
    if (rank == 0) throw PreconditionError("bundle rank must be positive");
    const double h = kTwoPi / static_cast<double>(n_points);
    const double inv_h2 = 1.0 / (h * h);
    const auto n = static_cast<Eigen::Index>(n_points);
    const auto m = static_cast<Eigen::Index>(rank);
    Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n * m, n * m);
    for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::Index next = (j + 1) % n;
        const Eigen::Index prev = (j + n - 1) % n;
        for (Eigen::Index c = 0; c < m; ++c) {
            lap(j * m + c, j * m + c) = 2.0 * inv_h2;
            lap(j * m + c, next * m + c) = -inv_h2;
            lap(j * m + c, prev * m + c) = -inv_h2;
        }
    }
    return lap;
}

Eigen::MatrixXd build_laplacian(const CircleGrid& grid, std::size_t rank) {
    return periodic_laplacian(grid.n_points, rank);
}

OperatorFamily make_family(const CircleGrid& grid, std::size_t rank, MatrixField field_a,
                           MatrixField field_v, std::string label,
                           std::optional<ScalarFunctionSamples> scalar_potential) {
    if (grid.n_points < 8) throw SizingError("family grid is too coarse");
    check_field(field_a, grid, rank, "A");
    check_field(field_v, grid, rank, "V");
    if (scalar_potential) {
        if (scalar_potential->values.size() != grid.n_points ||
            scalar_potential->d1.size() != grid.n_points ||
            scalar_potential->d2.size() != grid.n_points) {
            throw PreconditionError("scalar potential samples do not match the grid");
        }
        if (!field_v.is_scalar()) {
            throw PreconditionError("scalar potential given for a matrix-valued V");
        }
    }
    OperatorFamily family;
    family.grid = grid;
    family.rank = rank;
    family.laplacian = build_laplacian(grid, rank);
    family.field_a = std::move(field_a);
    family.field_v = std::move(field_v);
    family.label = std::move(label);
    family.scalar_potential = std::move(scalar_potential);
    return family;
}

Eigen::MatrixXd assemble(const OperatorFamily& family, double t) {
    Eigen::MatrixXd out = family.laplacian;
    if (t == 0.0) return out;
    add_blocks(out, family.field_a, t);
    add_blocks(out, family.field_v, t * t);
    return out;
}

Eigen::MatrixXd assemble_derivative(const OperatorFamily& family, double t) {
    const auto dim = family.dimension();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim, dim);
    add_blocks(out, family.field_a, 1.0);
    add_blocks(out, family.field_v, 2.0 * t);
    return out;
}

Eigen::MatrixXd block_diagonal(const MatrixField& field) {
    const auto dim = static_cast<Eigen::Index>(field.size() * field.rank);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim, dim);
    add_blocks(out, field, 1.0);
    return out;
}

MatrixFamily to_matrix_family(const OperatorFamily& family) {
    MatrixFamily m;
    m.constant = family.laplacian;
    m.linear = block_diagonal(family.field_a);
    m.quadratic = block_diagonal(family.field_v);
    m.weight = family.weight();
    return m;
}

OperatorFamily build_witten_family(const CircleGrid& grid, const ScalarFunctionSamples& f,
                                   int degree) {
    if (degree != 0 && degree != 1) {
        throw PreconditionError("Witten family degree must be 0 or 1");
    }
    const std::size_t n = grid.n_points;
    if (f.values.size() != n || f.d1.size() != n || f.d2.size() != n) {
        throw PreconditionError("Morse function samples do not match the grid");
    }
    const double sign = degree == 0 ? -1.0 : 1.0;
    std::vector<double> a(n);
    ScalarFunctionSamples v;
    v.values.resize(n);
    v.d1.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        a[j] = sign * f.d2[j];
        v.values[j] = f.d1[j] * f.d1[j];
        v.d1[j] = 2.0 * f.d1[j] * f.d2[j];
    }
    v.d2 = periodic_centered_difference(v.d1, grid.spacing);
    MatrixField field_a = scalar_matrix_field(1, a);
    MatrixField field_v = scalar_matrix_field(1, v.values);
    return make_family(grid, 1, std::move(field_a), std::move(field_v),
                       "witten-degree-" + std::to_string(degree), std::move(v));
}

double validity_horizon(const CircleGrid& grid, double points_per_well) {
    const double width = points_per_well * grid.spacing;
    return 1.0 / (width * width);
}

}  // namespace branchlab
