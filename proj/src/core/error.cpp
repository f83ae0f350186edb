#include "error.hpp"

namespace solid {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Data: return "data";
    case ErrorKind::Checksum: return "checksum";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Version: return "version";
    case ErrorKind::Numerical: return "numerical";
  }
  return "unknown";
}

}  // namespace solid
