#pragma once

#include <stdexcept>
#include <string>

namespace lmpc {

/// Malformed configuration or input data. CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A runtime guarantee that should hold by construction was violated
/// (non-monotone iteration cost, failed Lyapunov decrease, ...).
/// CLI maps this to exit code 2.
class InvariantViolation : public std::runtime_error {
 public:
  explicit InvariantViolation(const std::string& what) : std::runtime_error(what) {}
};

/// A problem that must be solvable turned out infeasible (controller QP,
/// initial trajectory generation). CLI maps this to exit code 3.
class InfeasibleError : public std::runtime_error {
 public:
  explicit InfeasibleError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lmpc
