#pragma once

#include <stdexcept>
#include <string>

namespace batmil {

/// Input outside an operation's mathematical domain (non-finite values,
/// points on or outside the Poincare ball, empty sequences).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Mismatched tensor or sequence dimensions.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value (odd state size, top_k > k, unknown key...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or corrupted file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace batmil
