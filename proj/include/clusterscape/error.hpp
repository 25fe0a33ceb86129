#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace clusterscape {

// Base of every error the library raises. `kind()` is stable and is what the
// HTTP layer and the CLI map onto status/exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

// Malformed input: bad JSON, wrong field types, values outside their domain.
class ValidationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : ValidationError(what + " at byte " + std::to_string(byte_offset)),
        offset_(byte_offset) {}
  std::size_t offset() const noexcept { return offset_; }
  const char* kind() const noexcept override { return "parse"; }

 private:
  std::size_t offset_;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "not_found"; }
};

// Layout/color/filter specification does not match the data it is applied to.
class SpecError : public ValidationError {
 public:
  using ValidationError::ValidationError;
  const char* kind() const noexcept override { return "spec"; }
};

class EmptySeriesError : public Error {
 public:
  EmptySeriesError() : Error("empty series") {}
  const char* kind() const noexcept override { return "empty_series"; }
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
  const char* kind() const noexcept override { return "shape"; }
};

class InsufficientDataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
  const char* kind() const noexcept override { return "insufficient_data"; }
};

class RuleLimitError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "rule_limit"; }
};

class DegenerateLayoutError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "degenerate_layout"; }
};

}  // namespace clusterscape
