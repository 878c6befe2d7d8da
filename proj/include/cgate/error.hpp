#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cgate {

enum class ErrorCode {
  kIo,
  kParse,
  kValidation,
  kLeakage,
  kDegenerateLabels,
  kSchemaMismatch,
  kVersion,
  kDimension,
  kConfig,
  kInfeasible,
  kProvenance,
  kConnection,
};

// Short machine-readable tag, used as the CLI error prefix.
std::string_view error_tag(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace cgate
