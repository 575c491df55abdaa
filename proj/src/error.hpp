#pragma once

#include <stdexcept>
#include <string>

namespace itnet {

enum class ErrorCode {
  DegenerateQuaternion,
  NotARotation,
  ShapeMismatch,
  NonFiniteValue,
  NonFiniteGradient,
  GraphCycle,
  EmptyEvaluation,
  UnknownFamily,
  EmptyScan,
  DegenerateCorrespondences,
  Config,
  Io,
  Format,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateQuaternion: return "DegenerateQuaternion";
    case ErrorCode::NotARotation: return "NotARotation";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::GraphCycle: return "GraphCycle";
    case ErrorCode::EmptyEvaluation: return "EmptyEvaluation";
    case ErrorCode::UnknownFamily: return "UnknownFamily";
    case ErrorCode::EmptyScan: return "EmptyScan";
    case ErrorCode::DegenerateCorrespondences: return "DegenerateCorrespondences";
    case ErrorCode::Config: return "ConfigError";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::Format: return "FormatError";
  }
  return "Error";
}

}  // namespace itnet
