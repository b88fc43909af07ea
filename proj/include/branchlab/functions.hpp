#pragma once

#include <array>
#include <string>
#include <string_view>

namespace branchlab {

/// Built-in periodic function vocabulary used by scenarios.
///
/// Every built-in is a trigonometric polynomial of degree at most two,
///   c0 + sum_{k=1,2} (a_k cos kx + b_k sin kx),
/// so values and derivatives of any order are analytic.
///
/// Recognised names:
///   "zero", "cos", "sin2" (sin^2 x), "const:c", "cos_shift:phi" (cos(x - phi)),
///   "poly_trig:a0,a1,b1,a2" (a0 + a1 cos x + b1 sin x + a2 cos 2x).
class ScalarFunction {
public:
    ScalarFunction() = default;

    /// Throws PreconditionError for unknown names or malformed parameters.
    static ScalarFunction parse(std::string_view expr);

    static ScalarFunction constant(double c);

    double value(double x) const { return derivative(x, 0); }
    double derivative(double x, int order) const;

    bool is_constant() const;
    const std::string& expr() const noexcept { return expr_; }

private:
    std::string expr_ = "zero";
    double c0_ = 0.0;
    std::array<double, 2> cos_ = {0.0, 0.0};
    std::array<double, 2> sin_ = {0.0, 0.0};
};

}  // namespace branchlab
