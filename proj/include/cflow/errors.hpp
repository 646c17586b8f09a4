#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (log of x <= 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced, divergence, underflow.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Object used in the wrong lifecycle state (untrained, unfrozen, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

class TrainingDataError : public Error {
 public:
  using Error::Error;
};

class DegeneracyError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace cflow
