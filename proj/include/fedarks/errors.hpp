#pragma once

#include <stdexcept>

namespace fedarks {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf where finite values are required.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// Incompatible structure: layout mismatch, empty operand list, bad shape.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, rejected at startup.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated contract between protocol steps (weight sums, missing state).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Batch cannot support the training objective.
class BatchError : public Error {
 public:
  using Error::Error;
};

// Non-finite values encountered mid-run.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedarks
