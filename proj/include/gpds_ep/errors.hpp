#pragma once

#include <stdexcept>
#include <string>

namespace gpds {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NonPositiveDefinite : public Error {
 public:
  using Error::Error;
};

class CholeskyFailure : public NonPositiveDefinite {
 public:
  using NonPositiveDefinite::NonPositiveDefinite;
};

class NonFinite : public Error {
 public:
  using Error::Error;
};

/// A single EP site update was rejected; the message bank is left untouched.
class UpdateSkipped : public Error {
 public:
  using Error::Error;
};

/// Every site update of a sweep was rejected.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class SensorCoincidence : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

inline void require_same_dim(long a, long b, const char* what) {
  if (a != b) {
    throw DimensionMismatch(std::string(what) + ": " + std::to_string(a) +
                            " vs " + std::to_string(b));
  }
}

}  // namespace gpds
