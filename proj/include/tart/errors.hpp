#pragma once

#include <stdexcept>
#include <string>

namespace tart {

// Input that violates an operation's contract (bad index, width, shape).
class RejectionError : public std::invalid_argument {
 public:
  explicit RejectionError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed or inconsistent configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Training or evaluation could not continue (non-finite loss, I/O failure).
// Maps to CLI exit code 3.
class RuntimeAbort : public std::runtime_error {
 public:
  explicit RuntimeAbort(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tart
