#pragma once

#include <stdexcept>
#include <string>

namespace smamba {

// Exit codes used by the CLI: 0 ok, 1 usage, 2 data error, 3 numeric failure.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumeric = 3,
};

// Bad invocation: unknown flags, malformed config keys, unsupported values.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Problems with files, datasets, manifests, checkpoints, or shapes.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatch in a tensor operation. Subtype of DataError so the CLI
// maps it to the data exit code.
class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& msg) : DataError(msg) {}
};

// NaN/Inf detected, non-scalar loss, double backward, and similar numeric
// state errors. Never ignored: a non-finite value is an error, not a value.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace smamba
