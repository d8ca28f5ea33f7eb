#pragma once

#include <stdexcept>
#include <string>

namespace calsm {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes of inputs disagree. The message names the offending dimension.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A quantity that must be nonnegative or finite by construction was not.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Bad user input: malformed files, invalid options, out-of-range values.
class InputError : public Error {
 public:
  using Error::Error;
};

// Experiment configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace calsm
