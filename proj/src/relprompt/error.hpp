#pragma once

#include <stdexcept>
#include <string>

namespace relprompt {

enum class ErrorKind {
  Config,   // invalid configuration or parameters
  Data,     // malformed or insufficient input data
  Io,       // file could not be read or written
  Numeric,  // NaN/Inf encountered during computation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_config(const std::string& message) {
  throw Error(ErrorKind::Config, message);
}
[[noreturn]] inline void throw_data(const std::string& message) {
  throw Error(ErrorKind::Data, message);
}
[[noreturn]] inline void throw_io(const std::string& message) {
  throw Error(ErrorKind::Io, message);
}
[[noreturn]] inline void throw_numeric(const std::string& message) {
  throw Error(ErrorKind::Numeric, message);
}

}  // namespace relprompt
