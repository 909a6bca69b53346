#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace htsr {

enum class ErrorCode {
  InvalidArgument,
  NonFiniteInput,
  ShapeMismatch,
  InsufficientSpectrum,
  DegenerateTail,
  ZeroSpectrum,
  InvalidStep,
  MissingBlockId,
  ManifestError,
  OrphanAdapter,
  IoError,
  EmptyInput,
  DuplicateLabel,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace htsr
