#pragma once

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "mlbpf/rng.hpp"

namespace mlbpf {

// Whether the likelihood family reports plain values or log values. Log-scale
// families are shifted jointly across all levels of a step before
// exponentiation, which keeps the level differences meaningful while avoiding
// underflow; the common factor cancels in the joint normalization.
enum class LikelihoodScale { linear, log_scale };

// A hidden Markov model with an ordered family of likelihood approximations.
// level_likelihoods[L] is the highest-fidelity (exact) likelihood; lower
// entries are its cheap approximations. All callables must be safe to invoke
// concurrently; randomness enters only through the explicit streams.
template <class State>
struct HmmModel {
  std::function<State(RngStream&)> sample_prior;
  std::function<State(const State&, RngStream&)> sample_transition;

  // Maps (state, step) -> likelihood of the step's observation.
  std::vector<std::function<double(const State&, int)>> level_likelihoods;
  LikelihoodScale scale = LikelihoodScale::linear;

  // Optional per-step hook, called with the top-level particle states before
  // any weighting. Models use it to refit data-driven corrections of the
  // lower-level likelihoods.
  std::function<void(std::span<const State>, int)> calibrate;

  // Number of observations the likelihoods can serve.
  int num_observations = std::numeric_limits<int>::max();

  int levels() const { return static_cast<int>(level_likelihoods.size()); }
  int top_level() const { return levels() - 1; }
};

}  // namespace mlbpf
