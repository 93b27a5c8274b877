#pragma once

#include <stdexcept>
#include <string>

namespace gsmt {

/// Base of every error raised by the library. `exit_code()` is the process
/// exit status the CLI reports for this error family.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

// Programming-contract violations (bad shapes, bad arguments).
class ContractError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

class StateError : public ContractError {
 public:
  using ContractError::ContractError;
};

class TapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Input data problems: unparseable files, empty inputs, degenerate data.
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class TrainingError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

class CompatibilityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 5; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace gsmt
