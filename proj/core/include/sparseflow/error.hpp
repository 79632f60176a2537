#pragma once

#include <stdexcept>
#include <string>

namespace sparseflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or argument contract violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure inside a training cycle (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace sparseflow
