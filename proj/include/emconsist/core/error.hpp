#pragma once

#include <stdexcept>
#include <string>

namespace emc {

enum class ErrorKind { validation, config, format, io, training };

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::config: return "config";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::training: return "training";
  }
  return "unknown";
}

/// Process exit code for an error category (0 is reserved for success).
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return 2;
    case ErrorKind::config: return 3;
    case ErrorKind::format: return 4;
    case ErrorKind::io: return 5;
    case ErrorKind::training: return 6;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind), detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the "<kind> error: " prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) fail(kind, message);
}

}  // namespace emc
