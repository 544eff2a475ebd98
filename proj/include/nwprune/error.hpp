#pragma once

#include <stdexcept>
#include <string>

namespace nwprune {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad magic, malformed header JSON, wrong dtype tag.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Header and data section disagree (lengths, offsets, checksum).
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Layer kind or graph construct the engine does not handle.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Bundle failed validate_bundle(); what() lists the diagnostics.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operation applied to a layer of the wrong kind.
class TypeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// A plan was applied to a bundle it was not built against.
class ProvenanceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace nwprune
