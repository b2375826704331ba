#pragma once

#include <stdexcept>
#include <string>

namespace ffield {

// Coarse error categories. These map one-to-one onto the C API status codes.
enum class ErrorCode {
  kInvalidArgument = 1,
  kIo = 2,
  kFormat = 3,
  kShape = 4,
  kNumeric = 5,
  kNotFound = 6,
  kState = 7,
  kInternal = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void Fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace ffield
