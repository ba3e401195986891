#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowtrack {

enum class ErrorCode {
  InvalidSpec,
  NonPositiveDefinite,
  DimensionMismatch,
  MissingFeatures,
  EmptyHistory,
  InsufficientHistory,
  AllWeightsZero,
  NonConjugateConfig,
  WindowTooLong,
  FileNotFound,
  HeaderMismatch,
  EmptyFile,
  IoError,
  ConfigError,
  UsageError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::NonPositiveDefinite: return "NonPositiveDefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MissingFeatures: return "MissingFeatures";
    case ErrorCode::EmptyHistory: return "EmptyHistory";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::AllWeightsZero: return "AllWeightsZero";
    case ErrorCode::NonConjugateConfig: return "NonConjugateConfig";
    case ErrorCode::WindowTooLong: return "WindowTooLong";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::HeaderMismatch: return "HeaderMismatch";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

}  // namespace flowtrack
