#pragma once

#include <stdexcept>
#include <string>

namespace mgpu {

/// Invalid environment, topology or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An API was called with arguments that violate its preconditions
/// (unknown rank, mismatched containers, wrong split policy).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A device arena could not satisfy an allocation.
class AllocationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The request is well-formed but not supported on the given topology.
class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative solver diverged or produced non-finite values.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mgpu
