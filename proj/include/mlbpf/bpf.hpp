#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mlbpf/errors.hpp"
#include "mlbpf/model.hpp"
#include "mlbpf/rng.hpp"

namespace mlbpf::bpf {

// Textbook bootstrap particle filter, written independently of the multilevel
// engine. Weights come from the exact (top-level) likelihood only; resampling
// is plain multinomial. Uses the same stream derivation so runs can be
// compared against the multilevel engine under a shared seed.

template <class State>
std::vector<State> bpf_init(const HmmModel<State>& model, std::int64_t n, std::uint64_t seed) {
  std::vector<State> particles;
  particles.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    RngStream rng = substream(seed, 0, Phase::init, static_cast<std::uint64_t>(i));
    particles.push_back(model.sample_prior(rng));
  }
  return particles;
}

// One weight/resample/mutate cycle in place. Returns the mean of the
// resampled particles (the filter estimate for this step) through out_mean
// when non-null; callers that only need the particle arrays can pass nullptr.
template <class State>
void bpf_step(std::vector<State>& particles, const HmmModel<State>& model, int obs_step,
              std::uint64_t seed, bool mutate_after = true) {
  const std::int64_t n = static_cast<std::int64_t>(particles.size());
  const auto& likelihood = model.level_likelihoods.back();

  std::vector<double> weights(n);
  if (model.scale == LikelihoodScale::log_scale) {
    double shift = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < n; ++i) {
      weights[i] = likelihood(particles[i], obs_step);
      if (std::isnan(weights[i]) || weights[i] == std::numeric_limits<double>::infinity()) {
        throw EvaluationError("non-finite log-likelihood", model.top_level(), i);
      }
      shift = std::max(shift, weights[i]);
    }
    if (shift == -std::numeric_limits<double>::infinity()) {
      throw DegenerateEnsembleError("all likelihoods vanish");
    }
    for (std::int64_t i = 0; i < n; ++i) {
      weights[i] = std::exp(weights[i] - shift) / static_cast<double>(n);
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      const double g = likelihood(particles[i], obs_step);
      if (!std::isfinite(g) || g < 0.0) {
        throw EvaluationError("likelihood not finite and nonnegative", model.top_level(), i);
      }
      weights[i] = g / static_cast<double>(n);
    }
  }

  std::vector<double> cumulative(n);
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    total += std::abs(weights[i]);
    cumulative[i] = total;
  }
  if (total <= 0.0) throw DegenerateEnsembleError("total weight is zero");

  std::vector<State> resampled;
  resampled.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    RngStream rng = substream(seed, static_cast<std::uint64_t>(obs_step), Phase::resample,
                              static_cast<std::uint64_t>(i));
    const double target = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    std::int64_t k = it == cumulative.end() ? n - 1 : static_cast<std::int64_t>(it - cumulative.begin());
    resampled.push_back(particles[k]);
  }
  particles.swap(resampled);

  if (mutate_after) {
    for (std::int64_t i = 0; i < n; ++i) {
      RngStream rng = substream(seed, static_cast<std::uint64_t>(obs_step), Phase::mutate,
                                static_cast<std::uint64_t>(i));
      particles[i] = model.sample_transition(particles[i], rng);
    }
  }
}

// Runs the filter and returns the per-step post-resampling means.
inline std::vector<double> bpf_filter(const HmmModel<double>& model, std::int64_t n,
                                      int n_steps, std::uint64_t seed) {
  std::vector<double> means;
  means.reserve(n_steps);
  std::vector<double> particles = bpf_init(model, n, seed);
  for (int step = 0; step < n_steps; ++step) {
    const std::uint64_t s = static_cast<std::uint64_t>(step);
    // Weight and resample, keeping the pre-mutation cloud for the estimate.
    bpf_step(particles, model, step, seed, /*mutate_after=*/false);
    double mean = 0.0;
    for (double x : particles) mean += x;
    means.push_back(mean / static_cast<double>(n));
    if (step + 1 < n_steps) {
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(particles.size()); ++i) {
        RngStream rng = substream(seed, s, Phase::mutate, static_cast<std::uint64_t>(i));
        particles[i] = model.sample_transition(particles[i], rng);
      }
    }
  }
  return means;
}

}  // namespace mlbpf::bpf
