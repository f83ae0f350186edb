#pragma once

#include <stdexcept>
#include <string>

namespace solid {

enum class ErrorKind {
  Usage,       // bad arguments or configuration
  Shape,       // tensor or grid extents disagree
  Validation,  // precondition on values violated
  Data,        // malformed or degenerate data
  Checksum,    // stored checksum does not match content
  Truncated,   // container shorter than its header declares
  Version,     // container version not understood
  Numerical,   // non-finite value or solver blowup
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

// Literal messages only; composed messages belong behind an explicit branch
// so hot paths do not format strings that are never thrown.
inline void require(bool cond, ErrorKind kind, const char* what) {
  if (!cond) fail(kind, what);
}

}  // namespace solid
