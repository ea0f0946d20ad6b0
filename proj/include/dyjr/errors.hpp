#pragma once

#include <stdexcept>
#include <string>

namespace dyjr {

// Error taxonomy. Each category maps onto a CLI exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed arguments to a pure operation, usually a caller bug.
class InputError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kNumeric = 3,
  kIo = 4,
};

ExitCode exit_code(const std::exception& e) noexcept;

}  // namespace dyjr
