#pragma once

#include <stdexcept>
#include <string>

namespace truncflow {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularInput : public Error {
 public:
  using Error::Error;
};

class NotOrthogonal : public Error {
 public:
  using Error::Error;
};

class NotAntisymmetric : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class IndexRange : public Error {
 public:
  using Error::Error;
};

class EmptyCluster : public Error {
 public:
  using Error::Error;
};

/// Adaptive stepping collapsed below the minimum step, or events chattered.
class StepUnderflow : public Error {
 public:
  using Error::Error;
};

/// A finite-difference stencil would straddle a sector boundary.
class NearKink : public Error {
 public:
  using Error::Error;
};

class SingularGram : public Error {
 public:
  using Error::Error;
};

class BadOrdering : public Error {
 public:
  using Error::Error;
};

class LabelInsideData : public Error {
 public:
  using Error::Error;
};

/// Scenario configuration failed validation; the message names the field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace truncflow
