#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace siflow {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller broke an interface contract (shape or dimension mismatch, wrong
/// schedule class, missing capability).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unparseable configuration / input file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A computation produced or received a non-finite value.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t index = -1)
      : Error(what), index_(index) {}
  /// Offending sample/step index, or -1 when not applicable.
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

/// The adaptive integrator gave up.
class IntegrationError : public NumericError {
 public:
  IntegrationError(const std::string& what, double last_time,
                   std::ptrdiff_t index = -1)
      : NumericError(what, index), last_time_(last_time) {}
  double last_accepted_time() const noexcept { return last_time_; }

 private:
  double last_time_;
};

}  // namespace siflow
