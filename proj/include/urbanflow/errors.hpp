#pragma once

#include <stdexcept>
#include <string>

namespace urbanflow {

/// Bad input or configuration. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor or grid shapes that do not line up.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A grid carries the wrong number of channels for the requested operation.
class ChannelError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Scene generation could not place a building within its retry budget.
class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file on disk could not be parsed.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The flow oracle produced a non-finite distribution.
class SolverDiverged : public std::runtime_error {
 public:
  SolverDiverged(int step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Steady state was not reached within the configured budget. Exit code 3.
class NotConverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training hit a NaN/Inf loss.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(int epoch, int batch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace urbanflow
