#pragma once

#include <stdexcept>
#include <string>

namespace stsr {

/// Incompatible tensor shapes. The message names every shape involved.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside an operation's mathematical domain (log of non-positive, non-finite softmax input).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Zero-length vector handed to a projection onto the unit sphere.
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// API misuse, e.g. backward() on a non-scalar.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ImputationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wrong magic number, unsupported version or malformed record.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TruncationError : public std::runtime_error {
 public:
  TruncationError(std::size_t expected, std::size_t actual, const std::string& what)
      : std::runtime_error("truncated file while reading " + what + ": expected " +
                           std::to_string(expected) + " bytes, got " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected_bytes() const noexcept { return expected_; }
  std::size_t actual_bytes() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace stsr
