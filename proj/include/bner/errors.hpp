#pragma once

#include <stdexcept>
#include <string>

namespace bner {

/// Parameter outside its admissible range (non-positive variance, |rho| >= 1, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A matrix that must be symmetric positive definite is not.
class FactorizationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The GLS normal matrix X'V^{-1}X is numerically singular.
class RankDeficiencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sample / auxiliary information do not agree (missing patterns, N_dt < n_dt, ...).
class ConsistencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known (0 otherwise).
class DataError : public std::runtime_error {
public:
    DataError(const std::string& path, std::size_t line, const std::string& what)
        : std::runtime_error(path + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace bner
