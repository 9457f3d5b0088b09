#pragma once

#include <stdexcept>
#include <string>

namespace asmmd {

/// Base class of every exception thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Incompatible tensor shapes or axis arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (negative sizes, out-of-range rates, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary containers (bad magic, version, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Unknown keys or unparseable values in run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or statistically degenerate inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures (missing files, short writes).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace asmmd
