#pragma once

#include <stdexcept>
#include <string>

namespace compose {

/// Precondition violated by a caller-supplied value.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation requested on an object that is not ready for it (e.g. an unloaded model).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Failure while reading or writing files, archives or datasets.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Correlation of a histogram with zero variance.
class UndefinedCorrelation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace compose
