#pragma once

#include <stdexcept>
#include <string>

namespace nsgr {

// Bad configuration (shapes, hyperparameters, malformed config files). CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Bad data (labels outside {0,1}, empty datasets, degenerate filters). CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Violated call contract (invalid permutation, out-of-range level, empty input row set).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// Internal consistency failure (cache hit diverging from recompute, frozen bytes changing).
class IntegrityError : public std::runtime_error {
 public:
  explicit IntegrityError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite losses and similar numeric breakdowns surfaced by diagnostics.
class DiagnosticError : public std::runtime_error {
 public:
  explicit DiagnosticError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nsgr
