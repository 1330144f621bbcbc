#pragma once

#include <stdexcept>
#include <string>

namespace earconv {

// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor extents are invalid or operands disagree on shape.
struct ShapeError : Error {
  using Error::Error;
};

// A numeric argument is outside its admissible range (e.g. lo >= hi).
struct RangeError : Error {
  using Error::Error;
};

// A class label is not in {0, 1}.
struct LabelError : Error {
  using Error::Error;
};

// A text input (manifest CSV, rendered table) could not be parsed.
struct ParseError : Error {
  using Error::Error;
};

// An image file could not be decoded; the message carries the path.
struct DecodeError : Error {
  using Error::Error;
};

// Checkpoint I/O failed: corrupt header, truncated payload or shape mismatch.
struct CheckpointError : Error {
  using Error::Error;
};

// An API was called in a state it does not support.
struct UsageError : Error {
  using Error::Error;
};

// A name (layer id, parameter name) does not exist.
struct LookupError : Error {
  using Error::Error;
};

// A configuration value violates its invariants.
struct ConfigError : Error {
  using Error::Error;
};

// A metric is undefined for the given inputs (e.g. single-class AUC).
struct MetricError : Error {
  using Error::Error;
};

}  // namespace earconv
