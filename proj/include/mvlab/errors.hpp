#pragma once

#include <stdexcept>
#include <string>

namespace mvlab {

// Base class for everything thrown on purpose by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments, bad config, broken call contracts. CLI exit code 2.
struct ValidationError : Error {
  using Error::Error;
};

struct InvalidParameterError : ValidationError {
  using ValidationError::ValidationError;
};

struct InvalidInputError : ValidationError {
  using ValidationError::ValidationError;
};

struct IndexError : ValidationError {
  using ValidationError::ValidationError;
};

struct ContractError : ValidationError {
  using ValidationError::ValidationError;
};

struct ConfigError : ValidationError {
  using ValidationError::ValidationError;
};

// KL(p||q) with q_j = 0 where p_j > 0.
struct DivergenceUndefinedError : ValidationError {
  using ValidationError::ValidationError;
};

// Requested orthonormal set cannot exist (2k > d).
struct InfeasibleOrthogonalityError : ValidationError {
  using ValidationError::ValidationError;
};

// Failures while a training loop or attack is running. CLI exit code 3.
struct TrainingError : Error {
  using Error::Error;
};

struct TrainingDivergedError : TrainingError {
  using TrainingError::TrainingError;
};

struct AttackFailureError : TrainingError {
  using TrainingError::TrainingError;
};

// Filesystem and serialization failures. CLI exit code 4.
struct IoError : Error {
  using Error::Error;
};

}  // namespace mvlab
