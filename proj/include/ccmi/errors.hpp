#pragma once

#include <stdexcept>
#include <string>

namespace ccmi {

/// Malformed input file: bad row, unknown label, column mismatch.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent or insufficient run parameters (e.g. Monte Carlo budget too small).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace ccmi
