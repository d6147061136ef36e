#pragma once

#include <stdexcept>
#include <string>

namespace evoflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of an operation (invalid point,
/// non-tangent vector, p >= q, unbounded test function for Bismut, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A queried time is at or beyond the model horizon T.
class HorizonError : public Error {
 public:
  using Error::Error;
};

/// A precondition on inputs that are not points or times (missing
/// ensembles, bad grid, too few paths).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration failed validation. `path` names the offending
/// field, e.g. "model.kind".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace evoflow
