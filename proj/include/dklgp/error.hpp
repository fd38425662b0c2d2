#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dkl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Numerical failures: the CLI maps these to exit code 3.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// A Cholesky pivot was not strictly positive.
class NotPositiveDefinite : public NumericalError {
public:
  explicit NotPositiveDefinite(const std::string &what, std::size_t pivot = 0)
      : NumericalError(what), pivot_(pivot) {}
  std::size_t pivot() const { return pivot_; }

private:
  std::size_t pivot_;
};

/// A triangular solve hit a zero diagonal entry.
class SingularDiagonal : public NumericalError {
public:
  explicit SingularDiagonal(const std::string &what, std::size_t index = 0)
      : NumericalError(what), index_(index) {}
  std::size_t index() const { return index_; }

private:
  std::size_t index_;
};

/// Two inputs coincide under the active distance metric.
class DuplicatePoints : public Error {
public:
  DuplicatePoints(const std::string &what, std::size_t a, std::size_t b)
      : Error(what), first_(a), second_(b) {}
  std::size_t first() const { return first_; }
  std::size_t second() const { return second_; }

private:
  std::size_t first_;
  std::size_t second_;
};

class ShapeMismatch : public Error {
public:
  using Error::Error;
};

class SizeGuard : public Error {
public:
  using Error::Error;
};

/// Invalid user configuration (exit code 2 at the CLI).
class ConfigError : public Error {
public:
  using Error::Error;
};

} // namespace dkl
