#pragma once

#include <stdexcept>
#include <string>

namespace bitshapley {

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, numeric 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

// Non-finite values, aborted optimization, violated numeric contracts.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace bitshapley
