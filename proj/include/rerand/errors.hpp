#pragma once

#include <stdexcept>
#include <string>

namespace rerand {

// Exit-code families used by the CLI: usage (2), data (3), numeric (4).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (CSV cell, config value).
class ParseError : public DataError {
 public:
  using DataError::DataError;
};

// Well-formed input that violates a contract (arm = 2, missing strata, ...).
class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularityError : public NumericError {
 public:
  using NumericError::NumericError;
};

class ConvergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Logistic fit whose fitted probabilities saturate at 0 or 1.
class SeparationError : public ConvergenceError {
 public:
  using ConvergenceError::ConvergenceError;
};

// Rejection loop exceeded its attempt budget.
class NonTerminationError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace rerand
