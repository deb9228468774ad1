#pragma once

#include <stdexcept>
#include <string>

namespace srmcomm {

/// Invalid or inconsistent user configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A probabilistic model whose covariance cannot be factorized or whose
/// dimensions disagree with its basis.
class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

/// The QP solver rejected its input or did not reach an optimal point
/// (CLI exit code 3).
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace srmcomm
