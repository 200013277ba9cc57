#pragma once

#include <stdexcept>
#include <string>

namespace gazefit {

/// Base class for all gazefit errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad caller input: dimension mismatches, out-of-range values, invalid configuration.
class InvalidArgumentError : public Error {
public:
    using Error::Error;
};

/// Malformed file content (PLY, PGM, JSON). Messages carry line/field diagnostics.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Structurally well-formed input that violates a documented invariant.
/// The message names the violated invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A required precondition on the call does not hold (e.g. non-converged fit).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Geometry too degenerate to proceed (zero-area mesh, singular matrix).
class DegenerateGeometryError : public Error {
public:
    using Error::Error;
};

/// Every correspondence was rejected by the robust kernel (total occlusion).
class NoCorrespondenceError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown. Carries the iteration at which it occurred when known.
class NumericalFailureError : public Error {
public:
    explicit NumericalFailureError(const std::string& what, int iteration = -1)
        : Error(what), iteration_(iteration) {}
    int iteration() const { return iteration_; }

private:
    int iteration_;
};

/// The constraint set of a solve is empty (e.g. eps below the attainable residual).
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// An image region required downstream could not be extracted.
class ExtractionError : public Error {
public:
    using Error::Error;
};

/// Filesystem-level failure: missing file, unwritable path.
class IoError : public Error {
public:
    using Error::Error;
};

/// A synthetic scenario that cannot produce usable data (e.g. full occlusion).
class DegenerateScenarioError : public Error {
public:
    using Error::Error;
};

} // namespace gazefit
