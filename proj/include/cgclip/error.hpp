#pragma once

#include <stdexcept>
#include <string>

namespace cgclip {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or module layout.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Dataset content cannot satisfy the request (missing identities, empty tracklets).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed user input such as captions or files.
class InputError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf observed while checked mode is on.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cgclip
