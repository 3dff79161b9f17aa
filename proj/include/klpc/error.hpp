#pragma once

#include <stdexcept>
#include <string>

namespace klpc {

// Root of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-contract input (non-finite samples, size mismatches).
class InputError : public Error {
 public:
  using Error::Error;
};

// Data that carries no information along some direction (zero variance,
// constant coefficient matrix).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class DegenerateDimensionError : public DegenerateError {
 public:
  DegenerateDimensionError(std::size_t dimension, const std::string& what)
      : DegenerateError(what), dimension_(dimension) {}
  std::size_t dimension() const noexcept { return dimension_; }

 private:
  std::size_t dimension_;
};

// Factorizations that fail even after the jitter policy is exhausted.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Conditioning point so far from the KDE samples that the conditional
// density denominator underflows.
class FarFromSupportError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Probability argument too close to 0 or 1 to bracket a quantile.
class BoundaryError : public InputError {
 public:
  using InputError::InputError;
};

class CorruptFileError : public Error {
 public:
  using Error::Error;
};

class VersionMismatchError : public Error {
 public:
  VersionMismatchError(std::string found, std::string expected)
      : Error("model file version mismatch: file has '" + found + "', this build reads '" +
              expected + "'"),
        found_(std::move(found)),
        expected_(std::move(expected)) {}
  const std::string& found() const noexcept { return found_; }
  const std::string& expected() const noexcept { return expected_; }

 private:
  std::string found_;
  std::string expected_;
};

}  // namespace klpc
