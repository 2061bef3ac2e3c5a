#pragma once

#include <stdexcept>
#include <string>

namespace memground {

// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf where finite values are required.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed user or file input (bad ids, inverted intervals, corrupt files).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An operation was attempted in the wrong training/evaluation mode.
class ModeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace memground
