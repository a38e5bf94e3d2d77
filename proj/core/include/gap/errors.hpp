// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace gap {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidGraphError : public Error {
 public:
  using Error::Error;
};

class UnsupportedPartitionError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or specification values. Maps to CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class CorpusError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data. Maps to CLI exit code 2.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File system failure (missing file, unwritable directory). Maps to exit code 3.
class IoError : public Error {
 public:
  using Error::Error;
};

class DegenerateFeatureError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training. Maps to exit code 4.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace gap
