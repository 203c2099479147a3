#pragma once

#include <stdexcept>
#include <string>

namespace glyphscribe {

enum class ErrorCode {
  InvalidArgument = 1,
  NotFound,
  Io,
  Format,
  Degenerate,
  Numerical,
  Conflict,
  Unavailable,
  PayloadTooLarge,
};

/// Base exception for everything thrown by the core. The code maps 1:1 onto
/// gs_status in the C API and onto HTTP statuses in the service.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string &message) {
  throw Error(code, message);
}

inline void require(bool condition, const std::string &message,
                    ErrorCode code = ErrorCode::InvalidArgument) {
  if (!condition)
    throw Error(code, message);
}

} // namespace glyphscribe
