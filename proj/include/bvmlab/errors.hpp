#pragma once

#include <stdexcept>
#include <string>

namespace bvmlab {

// Invalid inputs: bad grids, malformed configs, violated preconditions.
struct ValidationError : std::invalid_argument {
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Numerical breakdown that signals a violated model assumption
// (singular information, Cholesky failure, support mismatch).
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Sampler diagnostics below hard floors (maps to CLI exit code 3).
struct DiagnosticsError : std::runtime_error {
    explicit DiagnosticsError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bvmlab
