#pragma once

#include "mms/abi.hpp"

#include <stdexcept>
#include <string>

MMS_BEGIN_NAMESPACE

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or length mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or inconsistent settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a forward op, log of a non-positive value, and similar.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input data, IO failures, too few samples for a request.
class DataError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& what, std::string context)
      : Error(what + " [" + context + "]"), context_(std::move(context)) {}
  const std::string& context() const noexcept { return context_; }

 private:
  std::string context_;
};

// Violation of the fine-tune/test split contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

MMS_END_NAMESPACE
