#pragma once

#include <stdexcept>
#include <string>

namespace sgvae {

// Base for every error raised by the library. The CLI maps IoError and
// FormatError to exit code 3 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. The message carries the offending line number
// when one is available.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inputs violate an operation's preconditions or a model invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace sgvae
