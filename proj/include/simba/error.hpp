#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace simba {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible shapes; the message names both operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside its valid range (dropout p >= 1, negative threshold, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// API misuse such as calling backward on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A mathematical invariant is violated (non-negative SSM eigenvalue, Δ <= 0).
class InvariantError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-numeric CSV cell; row is 1-based and counts the header line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : Error(what), row_(row), column_(column) {}
  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

// Invalid run configuration. path is a JSON pointer such as "/optim/base_lr".
class ConfigError : public Error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(path), detail_(what) {}
  const std::string& path() const noexcept { return path_; }
  // Message without the path prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string path_;
  std::string detail_;
};

}  // namespace simba
