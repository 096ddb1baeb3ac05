#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bnn {

enum class ErrorKind {
  dimension,
  config,
  data,
  numeric,
  bank_not_warm,
  checkpoint,
};

std::string_view to_string(ErrorKind kind);

// Process exit code for a failure category: 2 config, 3 data, 4 numeric.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace bnn
