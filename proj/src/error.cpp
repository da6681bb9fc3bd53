#include "freediff/error.hpp"

namespace freediff {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::DataIntegrity: return "data_integrity";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Format: return "format";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Schedule: return "schedule";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::Remote: return "remote";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::NotFound: return "not_found";
    case ErrorKind::Conflict: return "conflict";
    case ErrorKind::Unsupported: return "unsupported";
  }
  return "unknown";
}

}  // namespace freediff
