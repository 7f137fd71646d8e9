#pragma once

#include <stdexcept>
#include <string>

namespace lbpo {

/// Malformed argument: shape mismatch, out-of-range cell, non-finite input.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Barrier evaluated at or beyond its pole (delta_q >= epsilon).
class BarrierDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The baseline policy is measured unsafe (epsilon <= 0) where a safe one is required.
class UnsafeBaselineError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Linear-algebra breakdown: singular systems, non-finite CG iterates, bad curvature.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Q-function regression produced a non-finite loss.
class TrainingDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No safe baseline policy could be found within the pretraining budget.
class InitializationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lbpo
