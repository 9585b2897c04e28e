#pragma once

#include <bit>
#include <stdexcept>
#include <string>

static_assert(std::endian::native == std::endian::little,
              "container formats are little-endian; big-endian hosts are unsupported");

namespace picnet {

// Error taxonomy. The CLI maps these onto exit codes; library code throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between tensors (inner dimensions, channel counts, ...).
struct DimensionError : Error {
  using Error::Error;
};

// Invalid or inconsistent run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Bad runtime inputs: out-of-range labels, empty batches, unknown protocols.
struct ValidationError : Error {
  using Error::Error;
};

// File and stream failures, malformed containers, unknown format versions.
struct IoError : Error {
  using Error::Error;
};

// Model/data config cross-check failures.
struct CompatibilityError : Error {
  using Error::Error;
};

// NaN/Inf reached a place it must never be.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace picnet
