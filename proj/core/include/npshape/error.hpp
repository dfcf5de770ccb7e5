#pragma once

#include <stdexcept>
#include <string>

namespace npshape {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A record or argument violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or otherwise corrupt file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Embedding provider failed (graph load, runner failure, missing ids).
class ProviderError : public Error {
 public:
  using Error::Error;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Failure inside one pipeline stage; what() is prefixed with "[stage]".
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error("[" + stage + "] " + message), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace npshape
