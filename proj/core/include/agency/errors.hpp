#ifndef AGENCY_ERRORS_HPP
#define AGENCY_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace agency {

// Base class for everything thrown by the library. Configuration problems
// (bad parameters, bad grids) and solver failures are kept apart so callers
// can map them to distinct exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class SolverError : public Error {
public:
    explicit SolverError(const std::string& msg) : Error(msg) {}
};

// The inner effort maximization failed to converge or found two distinct
// maximizers; the best-response map is assumed to be single-valued.
class NonConcaveHamiltonian : public SolverError {
public:
    explicit NonConcaveHamiltonian(const std::string& msg) : SolverError(msg) {}
};

class SingularMatrix : public SolverError {
public:
    explicit SingularMatrix(const std::string& msg) : SolverError(msg) {}
};

// The Jacobian product defining the fixed-point map is numerically singular.
class SingularMBeta : public SolverError {
public:
    explicit SingularMBeta(const std::string& msg) : SolverError(msg) {}
};

// Newton inversion of the sensitivity map did not reach tolerance.
class NoConvergence : public SolverError {
public:
    NoConvergence(const std::string& msg, double last_residual)
        : SolverError(msg), last_residual(last_residual) {}
    double last_residual;
};

class Unstable : public SolverError {
public:
    explicit Unstable(const std::string& msg) : SolverError(msg) {}
};

class NumericOverflow : public SolverError {
public:
    explicit NumericOverflow(const std::string& msg) : SolverError(msg) {}
};

class Degenerate : public SolverError {
public:
    explicit Degenerate(const std::string& msg) : SolverError(msg) {}
};

// Verification failures (these signal a bug or a contract outside the
// verified class, not a numerical accident).
class BestResponseViolation : public SolverError {
public:
    explicit BestResponseViolation(const std::string& msg) : SolverError(msg) {}
};

class NashViolation : public SolverError {
public:
    explicit NashViolation(const std::string& msg) : SolverError(msg) {}
};

}  // namespace agency

#endif  // AGENCY_ERRORS_HPP
