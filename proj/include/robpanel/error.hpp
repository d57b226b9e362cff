#pragma once

#include <stdexcept>
#include <string>

namespace robpanel {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (CSV, configuration, panel shape).
class DataError : public Error {
 public:
  using Error::Error;
};

// Numerical or statistical failure while estimating.
class EstimationError : public Error {
 public:
  using Error::Error;
};

class DegeneratePanel : public DataError {
 public:
  using DataError::DataError;
};

class ShapeMismatch : public DataError {
 public:
  using DataError::DataError;
};

class MissingColumn : public DataError {
 public:
  using DataError::DataError;
};

class DuplicateCell : public DataError {
 public:
  using DataError::DataError;
};

class Unbalanced : public DataError {
 public:
  using DataError::DataError;
};

class NonNumeric : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public DataError {
 public:
  using DataError::DataError;
};

class BlockPolicyError : public DataError {
 public:
  using DataError::DataError;
};

class SingularDesign : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

class SingularWeightedDesign : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

class DegenerateDesign : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

class ZeroScale : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

class NoValidTuning : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

class UnstableCurvature : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

}  // namespace robpanel
