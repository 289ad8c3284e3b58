#pragma once

#include <stdexcept>
#include <string>

namespace etp {

/// Base class for every error this library raises on purpose.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shapes or dimensions do not line up.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// A numeric operation was asked to leave its domain (log of a
/// non-positive value, normalizing a near-zero vector).
class NumericDomainError : public Error {
  public:
    using Error::Error;
};

/// A documented precondition of an operation was violated.
class ContractError : public Error {
  public:
    using Error::Error;
};

/// Bad run configuration (unknown key, impossible split, ...).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// A file could not be parsed at all (malformed JSON, bad syntax).
class ParseError : public Error {
  public:
    using Error::Error;
};

/// A file parsed but violates the declared schema (wrong lead count,
/// wrong vector length).
class SchemaError : public Error {
  public:
    using Error::Error;
};

/// A keyed lookup failed (missing embedding id, missing tensor name).
class LookupError : public Error {
  public:
    using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergedError : public Error {
  public:
    using Error::Error;
};

/// A metric is undefined on the given input (single-class AUC).
class UndefinedMetricError : public Error {
  public:
    using Error::Error;
};

/// Base for checkpoint load failures.
class CheckpointError : public Error {
  public:
    using Error::Error;
};

class BadMagicError : public CheckpointError {
  public:
    using CheckpointError::CheckpointError;
};

class TruncatedError : public CheckpointError {
  public:
    using CheckpointError::CheckpointError;
};

class VersionError : public CheckpointError {
  public:
    using CheckpointError::CheckpointError;
};

}  // namespace etp
