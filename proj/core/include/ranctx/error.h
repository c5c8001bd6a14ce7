#pragma once

#include <stdexcept>
#include <string>

namespace ranctx {

/// Broad failure category, mapped onto CLI exit codes by the tools.
enum class ErrorKind {
  kValidation,  // bad configuration or arguments
  kData,        // input data cannot support the request
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error ValidationError(const std::string& what) {
  return Error(ErrorKind::kValidation, what);
}

inline Error DataError(const std::string& what) {
  return Error(ErrorKind::kData, what);
}

/// Raised by the readout when the weighted-std denominator collapses
/// (v1 - v2/v1 <= 0), i.e. a single neighbor carries all attention.
class DegenerateContextError : public Error {
 public:
  DegenerateContextError() : Error(ErrorKind::kData, "degenerate context") {}
};

}  // namespace ranctx
