#pragma once

#include <stdexcept>
#include <string>

namespace nlens {

// Base for every error the toolkit raises on bad input data or arguments.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition on an argument was violated (ratio out of range, bad id, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Data on disk or in memory is malformed.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace nlens
