#pragma once

#include <stdexcept>
#include <string>

namespace qcollapse {

// Bad caller input: indices out of range, mismatched shapes, invalid values.
class ArgumentError : public std::invalid_argument {
public:
    explicit ArgumentError(const std::string& what) : std::invalid_argument(what) {}
};

// Invalid or inconsistent run configuration (B = 0, unknown keys, ...).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// tau = 0 with a compact kernel family; the nonlocal term would be identically
// zero through the quadrature. Callers that want it off must set nu = 0 instead.
class DegenerateKernelError : public std::runtime_error {
public:
    explicit DegenerateKernelError(const std::string& what) : std::runtime_error(what) {}
};

// Trajectory whose total weight has collapsed below classification resolution.
class DegenerateStateError : public std::runtime_error {
public:
    explicit DegenerateStateError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf appeared inside an iterative solve.
class NumericalBlowupError : public std::runtime_error {
public:
    explicit NumericalBlowupError(const std::string& what) : std::runtime_error(what) {}
};

// Every realization of an ensemble failed to converge.
class EnsembleError : public std::runtime_error {
public:
    explicit EnsembleError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace qcollapse
