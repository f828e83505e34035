#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dsgd {

enum class ErrorCode {
  NotSymmetric,
  NoConvergence,
  NotPositiveDefinite,
  NotPSD,
  SingularSum,
  InvalidSize,
  InvalidStep,
  InvalidPartition,
  NotLaplacian,
  Disconnected,
  IndexOutOfRange,
  ShapeMismatch,
  InvalidParam,
  UnsupportedCombination,
  StepTooLarge,
  SingularMatrix,
  InsufficientSamples,
  NonPositive,
  TooFewPoints,
  BudgetExceeded,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this exception type; the code
// lets callers (and the CLI exit-code mapping) distinguish failure kinds.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::SingularSum: return "SingularSum";
    case ErrorCode::InvalidSize: return "InvalidSize";
    case ErrorCode::InvalidStep: return "InvalidStep";
    case ErrorCode::InvalidPartition: return "InvalidPartition";
    case ErrorCode::NotLaplacian: return "NotLaplacian";
    case ErrorCode::Disconnected: return "Disconnected";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidParam: return "InvalidParam";
    case ErrorCode::UnsupportedCombination: return "UnsupportedCombination";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::NonPositive: return "NonPositive";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace dsgd
