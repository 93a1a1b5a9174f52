#pragma once

#include <stdexcept>
#include <string>

namespace uic {

enum class ErrorKind { input, state, format, divergence, io };

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::input: return "input";
    case ErrorKind::state: return "state";
    case ErrorKind::format: return "format";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct InputError : Error {
  explicit InputError(const std::string& w) : Error(ErrorKind::input, w) {}
};
struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorKind::state, w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorKind::format, w) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error(ErrorKind::divergence, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};

}  // namespace uic
