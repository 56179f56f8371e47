#pragma once

#include <stdexcept>
#include <string>

namespace semidense {

enum class ErrorCode {
  kCheirality,
  kDegenerate,
  kDomain,
  kArgument,
  kVisibility,
  kNumeric,
  kIo,
  kSchema,
};

const char* to_string(ErrorCode code);

// Every library failure is reported through this type; code() lets callers
// branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kCheirality: return "cheirality";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kDomain: return "domain";
    case ErrorCode::kArgument: return "argument";
    case ErrorCode::kVisibility: return "visibility";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kSchema: return "schema";
  }
  return "unknown";
}

}  // namespace semidense
