#pragma once

#include <stdexcept>
#include <string>

namespace branchlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Grid or matrix dimensions that cannot be used.
class SizingError : public Error {
public:
    using Error::Error;
};

/// An operation was called with inputs violating its contract.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// The eigensolver did not produce pairs meeting the residual bound.
class SolverError : public Error {
public:
    SolverError(const std::string& what, double worst_residual)
        : Error(what), worst_residual_(worst_residual) {}

    double worst_residual() const noexcept { return worst_residual_; }

private:
    double worst_residual_;
};

/// Invalid scenario document; the message starts with the offending field path.
class ScenarioError : public Error {
public:
    ScenarioError(const std::string& field, const std::string& message)
        : Error(field + ": " + message), field_(field) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace branchlab
