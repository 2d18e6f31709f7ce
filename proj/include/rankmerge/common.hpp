#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rankmerge {

using Id = std::uint64_t;
using Label = std::uint32_t;

/// Malformed or missing configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered during training or evaluation. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read, written, or failed format validation. CLI exit code 4.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Selects the serial reference path or the OpenMP path of a kernel.
/// Both produce byte-identical results.
enum class Execution { serial, parallel };

}  // namespace rankmerge
