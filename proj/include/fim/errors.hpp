// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.

#ifndef FIM_ERRORS_HPP
#define FIM_ERRORS_HPP

#include <cmath>
#include <stdexcept>
#include <string>

namespace fim {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed arguments that violate a documented precondition.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// A geometric or combinatorial constraint cannot be satisfied; the message
// names the binding constraint.
class FeasibilityError : public Error {
 public:
  using Error::Error;
};

// A linear system or covariance factorization is numerically unusable.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

// File or byte-level persistence failed or round-tripped inconsistently.
class SerializationError : public Error {
 public:
  using Error::Error;
};

inline void check(bool condition, const std::string& message) {
  if (!condition) throw InvalidInputError(message);
}

inline void check_positive(double value, const std::string& name) {
  if (!(value > 0.0)) throw InvalidInputError(name + " must be positive");
}

inline void check_non_negative(double value, const std::string& name) {
  if (!(value >= 0.0)) throw InvalidInputError(name + " must be non-negative");
}

inline void check_finite(double value, const std::string& name) {
  if (!std::isfinite(value)) throw InvalidInputError(name + " must be finite");
}

}  // namespace fim

#endif  // FIM_ERRORS_HPP
