#pragma once

#include <stdexcept>
#include <string>

namespace tdcmn {

/// Error categories. The CLI maps each one to a stable exit code.
enum class ErrorKind {
  dimension,   // shape contracts between tensors / model and data
  config,      // invalid configuration values
  data,        // malformed or inconsistent dataset contents
  parse,       // unreadable file syntax
  io,          // filesystem failures
  checkpoint,  // corrupt or incompatible checkpoint
  variant,     // operation unsupported by the model variant
  numeric,     // non-finite values
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(ErrorKind::dimension, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what)
      : Error(ErrorKind::parse, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what)
      : Error(ErrorKind::checkpoint, what) {}
};

class VariantError : public Error {
 public:
  explicit VariantError(const std::string& what)
      : Error(ErrorKind::variant, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::numeric, what) {}
};

}  // namespace tdcmn
