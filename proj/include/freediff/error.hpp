#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace freediff {

enum class ErrorKind {
  DataIntegrity,   // non-finite or otherwise corrupt values
  Numerical,       // a numerical consistency check failed
  Format,          // malformed .fdlt payload
  Shape,           // tensor shapes disagree with a contract
  Schedule,        // timestep not on the grid / outside coverage
  Convergence,     // fixed-point inversion diverged
  Protocol,        // malformed remote-denoiser message
  Transport,       // network failure or timeout
  Remote,          // remote denoiser answered with an error status
  Validation,      // invalid configuration value
  Precondition,    // operation invoked in the wrong state
  NotFound,
  Conflict,
  Unsupported,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library. `field()` names the offending
/// config key, header field or protocol member when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string field = {})
      : std::runtime_error(message), kind_(kind), field_(std::move(field)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorKind kind_;
  std::string field_;
};

}  // namespace freediff
