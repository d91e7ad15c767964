#pragma once

#include <stdexcept>
#include <string>

namespace acg {

// Process exit codes shared by the CLI and the error types below.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kInputFormat = 3,
  kCheckpoint = 4,
  kNumeric = 5,
};

class AcgError : public std::runtime_error {
 public:
  AcgError(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

struct UsageError : AcgError {
  explicit UsageError(const std::string& w) : AcgError(ExitCode::kUsage, w) {}
};

// Malformed input files, missing resources, bad arguments to data operations.
struct FormatError : AcgError {
  explicit FormatError(const std::string& w) : AcgError(ExitCode::kInputFormat, w) {}
};

struct CheckpointError : AcgError {
  explicit CheckpointError(const std::string& w) : AcgError(ExitCode::kCheckpoint, w) {}
};

// NaN/Inf produced anywhere in the numeric path.
struct NumericError : AcgError {
  explicit NumericError(const std::string& w) : AcgError(ExitCode::kNumeric, w) {}
};

// Shape disagreement between an input and a parameter.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace acg
