#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace afloc {

enum class ErrorCode {
  MalformedFrame,
  DimensionMismatch,
  ValueOutOfRange,
  UnknownReferencePoint,
  InsufficientSamples,
  TooManyLinks,
  ResolutionMismatch,
  ShapeMismatch,
  NoRecordedForward,
  DegenerateCalibration,
  CalibrationFrozen,
  NonFiniteLoss,
  InsufficientData,
  TooFewClasses,
  OutOfRoom,
  InvalidArgument,
  IoError,
  FormatError,
};

std::string_view error_name(ErrorCode code);

/// Error classes used for process exit codes: 3 for data errors, 4 for
/// numeric failures.
bool is_numeric_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const { return error_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace afloc
