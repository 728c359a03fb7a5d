// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fedmm {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was not met (bad N, p, mu, sample, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A computation produced non-finite values or failed to converge.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A closed-form bound cannot be evaluated because a required hypothesis fails.
class HypothesisError : public Error {
 public:
  using Error::Error;
};

/// An experiment configuration is malformed. `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace fedmm
