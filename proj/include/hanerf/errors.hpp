#pragma once

#include <stdexcept>
#include <string>

namespace hanerf {

// Error taxonomy shared by the library and the CLI. The CLI maps categories
// to process exit codes (io -> 2, missing artifact -> 3, bad input -> 4,
// anything else -> 1).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed caller input: out-of-range pixel, undersized image, bad pose.
class InputError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration: shape mismatches, invalid hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures with the offending path in the message.
class IoError : public Error {
 public:
  using Error::Error;
};

// A required artifact (checkpoint, manifest, referenced file) is missing
// or incompatible with the requested operation.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

// Structurally invalid serialized data (bad magic, truncation, version).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite values appeared during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Procedural generation could not satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace hanerf
