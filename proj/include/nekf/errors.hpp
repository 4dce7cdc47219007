#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nekf {

/// Operand shapes do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Cholesky factorization failed; `pivot()` is the zero-based column where
/// the leading minor stopped being positive.
class DecompositionError : public std::runtime_error {
 public:
  DecompositionError(const std::string& what, std::size_t pivot)
      : std::runtime_error(what), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// An operation produced NaN or Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `offset()` is a byte offset for binary formats or a
/// row index for text formats; the message names the exact location.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Failure inside the inference pipeline, labelled with the phase
/// ("filter", "smooth", "rollout", "loss") and the time step involved.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string phase, std::size_t step, const std::string& cause)
      : std::runtime_error(phase + " step " + std::to_string(step) + ": " + cause),
        phase_(std::move(phase)),
        step_(step) {}
  const std::string& phase() const noexcept { return phase_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::string phase_;
  std::size_t step_;
};

}  // namespace nekf
