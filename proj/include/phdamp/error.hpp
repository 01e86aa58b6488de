#pragma once

#include <stdexcept>
#include <string>

namespace phdamp {

/// Failure categories; the CLI maps them onto process exit codes.
enum class ErrorKind {
    Config = 2,      ///< malformed input document or invalid parameters
    Solver = 3,      ///< iterative solver did not converge / factorization failed
    Invariant = 4,   ///< a model or result invariant was violated
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class SolverError : public Error {
public:
    explicit SolverError(const std::string& what) : Error(ErrorKind::Solver, what) {}
};

class InvariantError : public Error {
public:
    explicit InvariantError(const std::string& what) : Error(ErrorKind::Invariant, what) {}
};

}  // namespace phdamp
