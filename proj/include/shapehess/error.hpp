#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace shapehess {

enum class ErrorCode {
  InvalidArgument,
  InvalidMesh,
  InvertedElement,
  SolverBreakdown,
  NoConvergence,
  DegenerateForm,
  ConjugateUnavailable,
  WrongPair,
  NonnormalV,
  SupportViolation,
  UnsupportedOrder,
  UnsupportedCombination,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::InvalidMesh: return "INVALID_MESH";
    case ErrorCode::InvertedElement: return "INVERTED_ELEMENT";
    case ErrorCode::SolverBreakdown: return "SOLVER_BREAKDOWN";
    case ErrorCode::NoConvergence: return "NO_CONVERGENCE";
    case ErrorCode::DegenerateForm: return "DEGENERATE_FORM";
    case ErrorCode::ConjugateUnavailable: return "CONJUGATE_UNAVAILABLE";
    case ErrorCode::WrongPair: return "WRONG_PAIR";
    case ErrorCode::NonnormalV: return "NONNORMAL_V";
    case ErrorCode::SupportViolation: return "SUPPORT_VIOLATION";
    case ErrorCode::UnsupportedOrder: return "UNSUPPORTED_ORDER";
    case ErrorCode::UnsupportedCombination: return "UNSUPPORTED_COMBINATION";
    case ErrorCode::ConfigError: return "CONFIG_ERROR";
    case ErrorCode::IoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

/// Exception carrying a machine-readable code; the message is prefixed with it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace shapehess
