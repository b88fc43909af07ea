#include "branchlab/functions.hpp"

#include "branchlab/error.hpp"

#include <charconv>
#include <cmath>
#include <vector>

namespace branchlab {

namespace {

double parse_number(std::string_view text, std::string_view expr) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || !std::isfinite(value)) {
        throw PreconditionError("malformed parameter '" + std::string(text) + "' in function '" +
                                std::string(expr) + "'");
    }
    return value;
}

std::vector<double> parse_list(std::string_view text, std::string_view expr) {
    std::vector<double> out;
    while (true) {
        auto comma = text.find(',');
        out.push_back(parse_number(text.substr(0, comma), expr));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

}  // namespace

ScalarFunction ScalarFunction::parse(std::string_view expr) {
    ScalarFunction f;
    f.expr_ = std::string(expr);

    const auto colon = expr.find(':');
    const std::string_view name = expr.substr(0, colon);
    const std::string_view args =
        colon == std::string_view::npos ? std::string_view{} : expr.substr(colon + 1);
    const bool has_args = colon != std::string_view::npos;

    auto require_args = [&](std::size_t count) {
        if (!has_args) {
            throw PreconditionError("function '" + std::string(expr) + "' needs parameters");
        }
        auto values = parse_list(args, expr);
        if (values.size() != count) {
            throw PreconditionError("function '" + std::string(expr) + "' expects " +
                                    std::to_string(count) + " parameter(s)");
        }
        return values;
    };
    auto forbid_args = [&] {
        if (has_args) {
            throw PreconditionError("function '" + std::string(name) + "' takes no parameters");
        }
    };

    if (name == "zero") {
        forbid_args();
    } else if (name == "cos") {
        forbid_args();
        f.cos_[0] = 1.0;
    } else if (name == "sin2") {
        // sin^2 x = 1/2 - cos(2x)/2
        forbid_args();
        f.c0_ = 0.5;
        f.cos_[1] = -0.5;
    } else if (name == "const") {
        f.c0_ = require_args(1)[0];
    } else if (name == "cos_shift") {
        const double phi = require_args(1)[0];
        f.cos_[0] = std::cos(phi);
        f.sin_[0] = std::sin(phi);
    } else if (name == "poly_trig") {
        const auto p = require_args(4);
        f.c0_ = p[0];
        f.cos_[0] = p[1];
        f.sin_[0] = p[2];
        f.cos_[1] = p[3];
    } else {
        throw PreconditionError("unknown function '" + std::string(expr) + "'");
    }
    return f;
}

ScalarFunction ScalarFunction::constant(double c) {
    ScalarFunction f;
    f.c0_ = c;
    f.expr_ = "const:" + std::to_string(c);
    return f;
}

double ScalarFunction::derivative(double x, int order) const {
    if (order < 0) throw PreconditionError("negative derivative order");
    double result = order == 0 ? c0_ : 0.0;
    for (int k = 1; k <= 2; ++k) {
        const double a = cos_[k - 1];
        const double b = sin_[k - 1];
        if (a == 0.0 && b == 0.0) continue;
        // d^r/dx^r of a cos(kx) + b sin(kx) cycles with period four in r.
        const double scale = std::pow(static_cast<double>(k), order);
        const double c = std::cos(k * x);
        const double s = std::sin(k * x);
        double term = 0.0;
        switch (order % 4) {
            case 0: term = a * c + b * s; break;
            case 1: term = -a * s + b * c; break;
            case 2: term = -a * c - b * s; break;
            case 3: term = a * s - b * c; break;
        }
        result += scale * term;
    }
    return result;
}

bool ScalarFunction::is_constant() const {
    return cos_[0] == 0.0 && cos_[1] == 0.0 && sin_[0] == 0.0 && sin_[1] == 0.0;
}

}  // namespace branchlab
