#pragma once

#include <stdexcept>
#include <string>

namespace twoswitch {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid input: malformed scenario, violated invariant, bad dimensions.
/// The CLI maps this family to exit code 2.
class ValidationError : public Error {
public:
  using Error::Error;
};

class DimensionError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Requested work exceeds a documented budget (e.g. exact enumeration depth).
class BudgetError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Numerical failure during a computation. The CLI maps this to exit code 3.
class NumericError : public Error {
public:
  using Error::Error;
};

class SolverError : public NumericError {
public:
  using NumericError::NumericError;
};

} // namespace twoswitch
