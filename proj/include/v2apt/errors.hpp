// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace v2apt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value, unknown key, or config mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Violated pre/post-condition of an operation (e.g. freeze violation).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or function value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. `field()` names the offending header field.
class FormatError : public Error {
 public:
  FormatError(std::string field, const std::string& what)
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace v2apt
