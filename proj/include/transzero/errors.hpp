#pragma once

#include <stdexcept>
#include <string>

namespace tz {

// Shapes of operands do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A data structure violates its own invariants (malformed mask, bad ordering,
// missing statistics). Always indicates a bug in the caller.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace tz
