#pragma once

#include <stdexcept>
#include <string>

namespace tsfm {

// Error taxonomy mirrored by the CLI exit codes: configuration problems are
// reported before any work starts, data errors while reading or validating
// inputs, numeric failures during model execution.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfigError = 2,
  kExitDataError = 3,
  kExitNumericError = 4,
};

}  // namespace tsfm
