#include "afloc/errors.hpp"

namespace afloc {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedFrame: return "MalformedFrame";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::UnknownReferencePoint: return "UnknownReferencePoint";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::TooManyLinks: return "TooManyLinks";
    case ErrorCode::ResolutionMismatch: return "ResolutionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NoRecordedForward: return "NoRecordedForward";
    case ErrorCode::DegenerateCalibration: return "DegenerateCalibration";
    case ErrorCode::CalibrationFrozen: return "CalibrationFrozen";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::TooFewClasses: return "TooFewClasses";
    case ErrorCode::OutOfRoom: return "OutOfRoom";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

bool is_numeric_error(ErrorCode code) {
  return code == ErrorCode::NonFiniteLoss ||
         code == ErrorCode::DegenerateCalibration;
}

}  // namespace afloc
