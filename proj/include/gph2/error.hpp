#pragma once

#include <stdexcept>
#include <string>

namespace gph2 {

// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or index disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, diverging losses, missing gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent on-disk data (graph directories, expert files).
class IngestError : public Error {
 public:
  using Error::Error;
};

// Invalid user configuration or operation preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gph2
