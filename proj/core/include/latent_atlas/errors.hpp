#pragma once

#include <stdexcept>
#include <string>

namespace latent_atlas {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad user input: unknown space, shape/dimension mismatch, invalid config.
/// Maps to process exit code 2.
class UsageError : public Error {
public:
  using Error::Error;
};

/// Numeric failure: NaN loss, zero-norm retraction, degenerate covariance.
/// Maps to process exit code 3.
class NumericError : public Error {
public:
  using Error::Error;
};

/// Filesystem / serialization failure. Maps to process exit code 4.
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace latent_atlas
