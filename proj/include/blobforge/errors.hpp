#pragma once

#include <stdexcept>
#include <string>

namespace blobforge {

// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Singular or non positive-definite covariance, or a blob that cannot be
// produced after the allowed number of attempts.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

// Tensor, map or raster dimensions that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Unknown blob or scene identifier.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Malformed edit, blob or request payload.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Ellipse fitting failed (too few or collinear pixels).
class FitError : public Error {
 public:
  using Error::Error;
};

// Conditional update against a stale revision.
class ConflictError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Accept/reject outcome of a filter. Rejection is a value, not an error.
struct Verdict {
  bool accepted = true;
  std::string reason;

  static Verdict accept() { return {}; }
  static Verdict reject(std::string why) { return {false, std::move(why)}; }
  explicit operator bool() const { return accepted; }
};

}  // namespace blobforge
