#pragma once

#include <stdexcept>
#include <string>

namespace smrl {

/// Bad configuration (unknown keys, out-of-range values). CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or unusable input data (CSV parse failures, schema mismatches,
/// non-binary treatment, degenerate cohorts). CLI exit code 3.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Training diverged: a loss or gradient went non-finite. CLI exit code 4.
struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace smrl
