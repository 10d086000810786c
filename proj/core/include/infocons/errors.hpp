#pragma once

#include <stdexcept>
#include <string>

namespace infocons {

// Malformed input files, inconsistent checkpoints, shape mismatches between
// a model and the data handed to it.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf during training or evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes that an operation cannot combine.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace infocons
