#include "htsr/error.hpp"

namespace htsr {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InsufficientSpectrum: return "InsufficientSpectrum";
    case ErrorCode::DegenerateTail: return "DegenerateTail";
    case ErrorCode::ZeroSpectrum: return "ZeroSpectrum";
    case ErrorCode::InvalidStep: return "InvalidStep";
    case ErrorCode::MissingBlockId: return "MissingBlockId";
    case ErrorCode::ManifestError: return "ManifestError";
    case ErrorCode::OrphanAdapter: return "OrphanAdapter";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DuplicateLabel: return "DuplicateLabel";
  }
  return "Unknown";
}

}  // namespace htsr
