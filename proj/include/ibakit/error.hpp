#pragma once

#include <stdexcept>
#include <string>

namespace ibakit {

// Base for every error the toolkit raises; what() is a single line.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes; message carries both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf where finite values are required.
class InvalidValueError : public Error {
 public:
  using Error::Error;
};

// API misuse: backward on a non-scalar, backward twice, and the like.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad user input: empty corpus, single-class data, bad target, bad config.
class InputError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint load failures, one type per cause.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class VersionError : public IoError {
 public:
  using IoError::IoError;
};

class TruncatedError : public IoError {
 public:
  using IoError::IoError;
};

class UnknownParameterError : public IoError {
 public:
  using IoError::IoError;
};

class MissingParameterError : public IoError {
 public:
  using IoError::IoError;
};

// Bottleneck optimization produced a non-finite loss.
class OptimizationError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace ibakit
