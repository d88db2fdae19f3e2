#pragma once

#include <stdexcept>
#include <string>

namespace disco {

// Base of every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed configuration or invalid arguments supplied by a caller.
struct ConfigError : Error {
  using Error::Error;
};

// Missing or inconsistent data (manifest gaps, misaligned batches, I/O).
struct DataError : Error {
  using Error::Error;
};

// Numerical failure during training (non-finite losses, degenerate vectors).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace disco
