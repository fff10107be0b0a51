#pragma once

#include <stdexcept>
#include <string>

namespace mstaf {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid model, layer, or run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// API misuse, e.g. backward on a non-scalar.
struct UsageError : Error {
  using Error::Error;
};

// Checkpoint load failure.
struct LoadError : Error {
  using Error::Error;
};

// Bad input data: unreadable images, malformed manifests, missing files.
struct DataError : Error {
  using Error::Error;
};

// The transformed object could not be placed inside the probe frame. Retry-able.
struct PlacementError : DataError {
  using DataError::DataError;
};

// Non-finite values during training.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace mstaf
