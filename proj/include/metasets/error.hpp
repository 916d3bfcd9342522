#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace metasets {

// Raised when a precondition on arguments is violated.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when an input is well-formed but geometrically degenerate
// (e.g. a cloud whose points all coincide).
class Degenerate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the text readers. `line()` is 1-based; 0 means "whole file".
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace metasets
