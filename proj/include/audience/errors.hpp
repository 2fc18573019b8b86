#pragma once

#include <stdexcept>
#include <string>

namespace audience {

/// Process exit codes used by the CLI. Library code throws the matching
/// exception type; the CLI maps it to the code.
enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,
  kExitData = 3,
  kExitNumerical = 4,
};

/// Bad arguments, bad config, out-of-range parameters.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or inconsistent input data (rows, files, schemas).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A numerical procedure failed to produce a usable result.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace audience
