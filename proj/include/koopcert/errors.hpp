#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace koopcert {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent dimensions, invalid parameters, schema violations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Data that carries no usable variation (e.g. every lifted coordinate constant).
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinite entries where finite numbers are required.
class NumericInputError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of a formula (e.g. nonpositive log argument).
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

/// Spectral radius >= 1 where a stable matrix is required.
class InstabilityError : public Error {
 public:
  using Error::Error;
};

/// The control block is not identifiable from the data. Carries a unit input
/// direction `a` with a^T U (numerically) in the row span of Z.
class NonIdentifiableError : public Error {
 public:
  NonIdentifiableError(const std::string& what, std::vector<double> direction)
      : Error(what), direction_(std::move(direction)) {}

  const std::vector<double>& direction() const noexcept { return direction_; }

 private:
  std::vector<double> direction_;
};

/// Malformed input file. `row` is 1-based and counts the header line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row)
      : Error(what + " (row " + std::to_string(row) + ")"), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

}  // namespace koopcert
