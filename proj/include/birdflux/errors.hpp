#pragma once

#include <stdexcept>
#include <string>

namespace birdflux {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tessellation or grid sizing that cannot produce a usable mesh.
class SizingError : public Error {
 public:
  using Error::Error;
};

/// Invalid geometric input (duplicate or collinear seeds, disks outside the mesh).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Query for an entity that does not exist (e.g. a face between non-adjacent cells).
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration, schema violations, mismatched artifacts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or insufficient data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown (non-finite values, CFL violations).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace birdflux
