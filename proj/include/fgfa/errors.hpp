#pragma once

#include <stdexcept>
#include <string>

namespace fgfa {

// Bad shapes, bad hyperparameters, malformed configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A runtime invariant the engine promised to uphold was violated
// (e.g. weight maps that do not sum to one). CLI exit code 3.
class ContractViolation : public std::runtime_error {
 public:
  explicit ContractViolation(const std::string& msg) : std::runtime_error(msg) {}
};

// File system / serialization failures. CLI exit code 4.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fgfa
