#pragma once

#include <stdexcept>
#include <string>

namespace gsstream {

/// Raised when caller-supplied data violates a documented precondition
/// (bad file rows, out-of-range parameters, malformed primitives).
/// The CLI maps it to exit status 2.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an iterative procedure leaves its sane operating range
/// (diverging training loss, non-finite parameters).
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace gsstream
