#pragma once

#include <stdexcept>
#include <string>

namespace sdelab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed expression source. Line and column are 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line, int column)
      : Error(what + " at line " + std::to_string(line) + ", column " +
              std::to_string(column)),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

/// Evaluation left the domain of a function (log of a non-positive
/// number, division by zero, fractional power of a negative number,
/// non-finite result).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent model or task configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure could not produce a result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdelab
