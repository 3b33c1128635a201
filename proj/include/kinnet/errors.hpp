#pragma once
#include <stdexcept>
#include <string>

namespace kinnet {

// Thrown by the mechanism / partition / config parsers. `line` is 1-based;
// 0 means the error is not tied to a specific line.
struct parse_error : std::runtime_error {
  int line;
  parse_error(const std::string& msg, int line_ = 0)
      : std::runtime_error(line_ > 0 ? "line " + std::to_string(line_) + ": " + msg : msg),
        line(line_) {}
};

// Bad experiment configuration (missing key, unusable value, absent path).
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime numerical failure: integrator breakdown, non-finite loss,
// eigen-solver non-convergence.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Differentiation kernel fed an argument outside its domain (log of a
// non-positive value, division by zero, ...).
struct derivative_domain_error : numeric_error {
  explicit derivative_domain_error(const std::string& msg) : numeric_error(msg) {}
};

// Filesystem trouble: unreadable input, unwritable output.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape disagreement between a state vector and the object consuming it.
struct dimension_error : std::invalid_argument {
  explicit dimension_error(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace kinnet
