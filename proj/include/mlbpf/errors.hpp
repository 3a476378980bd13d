#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mlbpf {

// Invalid configuration: bad schedules, dimensions, or option values.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// A likelihood or transition evaluation produced an unusable value.
// Carries the particle index and level it occurred at.
class EvaluationError : public std::runtime_error {
public:
  EvaluationError(const std::string& what, int level, std::int64_t particle)
      : std::runtime_error(what + " (level " + std::to_string(level) +
                           ", particle " + std::to_string(particle) + ")"),
        level_(level),
        particle_(particle) {}

  int level() const { return level_; }
  std::int64_t particle() const { return particle_; }

private:
  int level_;
  std::int64_t particle_;
};

// The ensemble carries no usable weight mass (all telescoped weights zero,
// or a drawn state whose aggregated weight cancels exactly).
class DegenerateEnsembleError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// The signed normalizer is exactly zero, so no self-normalized estimate exists.
class EstimateDegenerateError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Wraps any failure inside a filter run with the step it happened at.
class FilterStepError : public std::runtime_error {
public:
  FilterStepError(int step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}

  int step() const { return step_; }

private:
  int step_;
};

}  // namespace mlbpf
