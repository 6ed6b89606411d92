#pragma once

#include <stdexcept>
#include <string>

namespace seminf {

/// Raised when an argument violates an operation's precondition or a
/// structural invariant (shape mismatch, out-of-range index, bad config).
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised for file-system and format failures (unreadable file, bad magic,
/// truncated payload).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace seminf
