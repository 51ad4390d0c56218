#pragma once

#include <stdexcept>
#include <string>

namespace sublap {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of the operands do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a numerically meaningless result.
class NumericError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefiniteError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// An argument is outside its documented range.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A projector, Jacobian or Gram matrix has lower rank than requested.
/// `usable` carries the largest admissible subspace dimension when known.
class RankError : public Error {
 public:
  RankError(const std::string& what, std::size_t usable)
      : Error(what), usable_(usable) {}
  explicit RankError(const std::string& what) : Error(what), usable_(0) {}
  std::size_t usable() const noexcept { return usable_; }

 private:
  std::size_t usable_;
};

/// A dense object would exceed the configured size guard.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace sublap
