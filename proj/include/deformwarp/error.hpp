#pragma once

#include <stdexcept>
#include <string>

namespace deformwarp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Rectangle corners too close to collinear for an affine fit.
class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

/// Affine with |det A| too small to invert.
class SingularTransform : public Error {
 public:
  using Error::Error;
};

/// A saved forward context does not match the backward call.
class InvalidState : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class IncompatibleCheckpoint : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(long iteration, const std::string& what)
      : Error("training diverged at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}

  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

}  // namespace deformwarp
