#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evdet {

enum class ErrorCode {
  kBadMagic,
  kTruncatedFile,
  kOddLength,
  kSegmentTooLarge,
  kIncompleteStream,
  kUnsupportedOnEmptyPayload,
  kTraceTooShort,
  kInvalidArgument,
  kShapeMismatch,
  kEmptySequence,
  kTapeReuse,
  kKindMismatch,
  kNonFiniteGradient,
  kIoFailure,
  kDimMismatch,
  kEmptyDataset,
  kFormatError,
  kDivergenceDetected,
  kEmptyTestSet,
  kClassMismatch,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can dispatch without string
/// matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kOddLength: return "OddLength";
    case ErrorCode::kSegmentTooLarge: return "SegmentTooLarge";
    case ErrorCode::kIncompleteStream: return "IncompleteStream";
    case ErrorCode::kUnsupportedOnEmptyPayload: return "UnsupportedOnEmptyPayload";
    case ErrorCode::kTraceTooShort: return "TraceTooShort";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kEmptySequence: return "EmptySequence";
    case ErrorCode::kTapeReuse: return "TapeReuse";
    case ErrorCode::kKindMismatch: return "KindMismatch";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kDivergenceDetected: return "DivergenceDetected";
    case ErrorCode::kEmptyTestSet: return "EmptyTestSet";
    case ErrorCode::kClassMismatch: return "ClassMismatch";
  }
  return "Unknown";
}

}  // namespace evdet
