#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ofal {

enum class ErrorCode {
  UnsupportedFormat,
  CorruptFile,
  InsufficientClassSamples,
  IncompatibleCheckpoint,
  CorruptCheckpoint,
  EmptyTrainingSet,
  EmptyTestSet,
  ShapeError,
  InvalidDropoutRate,
  InvalidConfig,
  NumericalFailure,
  ClassExhausted,
  InsufficientPool,
  UnknownSample,
  RequiresTwoDimLatent,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::InsufficientClassSamples: return "InsufficientClassSamples";
    case ErrorCode::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::EmptyTestSet: return "EmptyTestSet";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::InvalidDropoutRate: return "InvalidDropoutRate";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::ClassExhausted: return "ClassExhausted";
    case ErrorCode::InsufficientPool: return "InsufficientPool";
    case ErrorCode::UnknownSample: return "UnknownSample";
    case ErrorCode::RequiresTwoDimLatent: return "RequiresTwoDimLatent";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

// Every failure surfaced by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace ofal
