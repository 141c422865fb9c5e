#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scr {

enum class ErrorCode {
  InvalidArgument,
  NonPositiveDepth,
  PixelOutOfBounds,
  ParseError,
  DimensionMismatch,
  IoError,
  NonFiniteValue,
  NonPositiveSigma,
  DegenerateConfiguration,
  AllPointsBehindCamera,
  InsufficientCorrespondences,
  NoConsensus,
  EmptyInput,
  LandmarkBehindCamera,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::PixelOutOfBounds: return "PixelOutOfBounds";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::AllPointsBehindCamera: return "AllPointsBehindCamera";
    case ErrorCode::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LandmarkBehindCamera: return "LandmarkBehindCamera";
  }
  return "Unknown";
}

/// Every failure raised by the library. The code is stable and machine
/// readable; what() carries "<Code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace scr
