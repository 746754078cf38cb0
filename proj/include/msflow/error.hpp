#pragma once

#include <stdexcept>
#include <string>

namespace msf {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition (bad shape, bad argument).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or encountered; the message names the primitive.
class NumericFailure : public Error {
 public:
  using Error::Error;
};

// Malformed input data (CSV ingestion).
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration or unsatisfiable protocol settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing, mismatched or corrupted artifact file.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public ArtifactError {
 public:
  using ArtifactError::ArtifactError;
};

class IntegrityError : public ArtifactError {
 public:
  using ArtifactError::ArtifactError;
};

// Not enough history before an anchor to cover a backcast window.
class InsufficientHistory : public Error {
 public:
  InsufficientHistory(const std::string& what, long long first_valid_anchor)
      : Error(what), first_valid_anchor_(first_valid_anchor) {}
  long long first_valid_anchor() const noexcept { return first_valid_anchor_; }

 private:
  long long first_valid_anchor_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace msf
