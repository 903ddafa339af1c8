#pragma once

#include <stdexcept>
#include <string>

namespace camp {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data, shape mismatches, violated preconditions.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed by a numeric kernel.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace camp
