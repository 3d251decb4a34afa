#pragma once

#include <stdexcept>
#include <string>

namespace planesplat {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

/// A raster sample that should hold a finite, positive value does not.
class InvalidSampleError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class DegenerateAlignmentError : public AlignmentError {
 public:
  using AlignmentError::AlignmentError;
};

class InsufficientPointsError : public Error {
 public:
  using Error::Error;
};

/// Input or configuration rejected before any work started (CLI exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite loss.
class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace planesplat
