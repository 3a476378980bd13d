#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mlbpf/ensemble.hpp"
#include "mlbpf/errors.hpp"
#include "mlbpf/model.hpp"

namespace mlbpf {

// Relative cancellation below which the signed normalizer is flagged as
// nearly degenerate.
inline constexpr double kNormalizerEpsilon = 1e-6;

struct FilterEstimate {
  Eigen::VectorXd prediction_mean;   // sign-weighted mean before weighting
  Eigen::VectorXd preresample_mean;  // self-normalized telescoped-weight mean
  Eigen::VectorXd filter_mean;       // sign-weighted mean after resampling
  double normalizer = 0.0;           // sum of signs / total size, in [-1, 1]
  double negative_fraction = 0.0;    // share of -1 signs after resampling
  double cancellation = 1.0;         // |sum w| / sum |w| of the telescoped weights
  bool degenerate_warning = false;   // cancellation below kNormalizerEpsilon
  double wall_clock = 0.0;           // seconds spent on this step
};

namespace detail {

// Open-addressing table that sums telescoped weights over bitwise-identical
// states. Hash collisions are resolved by comparing the states themselves.
template <class State>
class StateAggregator {
public:
  StateAggregator(const std::vector<State>& states, const std::vector<double>& weights)
      : states_(states), slot_of_(states.size()) {
    std::size_t cap = std::bit_ceil(states.size() * 2 + 1);
    mask_ = cap - 1;
    first_.assign(cap, -1);
    sum_.assign(cap, 0.0);
    for (std::size_t i = 0; i < states.size(); ++i) {
      std::size_t idx = mix64(state_hash_key(states[i])) & mask_;
      while (first_[idx] >= 0 &&
             !state_identical(states[static_cast<std::size_t>(first_[idx])], states[i])) {
        idx = (idx + 1) & mask_;
      }
      if (first_[idx] < 0) first_[idx] = static_cast<std::int64_t>(i);
      sum_[idx] += weights[i];
      slot_of_[i] = idx;
    }
  }

  // Aggregated weight of the state held by particle i.
  double aggregated(std::size_t i) const { return sum_[slot_of_[i]]; }

private:
  const std::vector<State>& states_;
  std::vector<std::size_t> slot_of_;
  std::vector<std::int64_t> first_;
  std::vector<double> sum_;
  std::size_t mask_ = 0;
};

// Smallest index whose cumulative weight exceeds target; skips zero-weight
// entries by construction.
inline std::int64_t pick_index(const std::vector<double>& cumulative, double target) {
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
  if (it == cumulative.end()) {
    // Rounding pushed the target to or past the total; take the last entry
    // that carries weight.
    std::int64_t j = static_cast<std::int64_t>(cumulative.size()) - 1;
    while (j > 0 && cumulative[j - 1] == cumulative[j]) --j;
    return j;
  }
  return static_cast<std::int64_t>(it - cumulative.begin());
}

template <class State>
Eigen::VectorXd weighted_state_mean(const std::vector<State>& states,
                                    const std::vector<double>& weights, double norm) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(state_dimension(states.front()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    state_accumulate(acc, states[i], weights[i]);
  }
  return acc / norm;
}

}  // namespace detail

// Draws the initial ensemble from the prior; all signs start at +1.
template <class State>
SignedEnsemble<State> init(const HmmModel<State>& model, const LevelSchedule& schedule,
                           std::uint64_t seed) {
  if (model.levels() < 1) throw ConfigError("model carries no likelihood levels");
  if (model.levels() != schedule.levels()) {
    throw ConfigError("schedule has " + std::to_string(schedule.levels()) +
                      " levels but the model has " + std::to_string(model.levels()));
  }
  SignedEnsemble<State> e;
  e.schedule = schedule;
  const std::int64_t total = schedule.total_size();
  e.states.reserve(total);
  for (std::int64_t i = 0; i < total; ++i) {
    RngStream rng = substream(seed, 0, Phase::init, static_cast<std::uint64_t>(i));
    e.states.push_back(model.sample_prior(rng));
  }
  e.signs.assign(total, 1);
  e.step_index = 0;
  return e;
}

// Telescoped weighting: a particle at level l receives the difference of the
// level-l and level-(l-1) likelihoods at its state, carried sign included,
// scaled by the level sample size. Level 0 differences against an implicit
// zero lower level.
template <class State>
SignedEnsemble<State> reweight(SignedEnsemble<State> e, const HmmModel<State>& model,
                               int obs_step) {
  if (e.has_raw_weights()) throw std::logic_error("ensemble is already weighted");
  if (model.levels() != e.schedule.levels()) throw ConfigError("model/schedule level mismatch");

  if (model.calibrate) {
    const int top = e.schedule.top_level();
    const std::int64_t begin = e.schedule.offset(top);
    const std::int64_t count = e.schedule.level_size(top);
    model.calibrate(std::span<const State>(e.states.data() + begin, count), obs_step);
  }

  const std::int64_t total = e.size();
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> own(total), below(total);

  for (int l = 0; l < model.levels(); ++l) {
    const std::int64_t begin = e.schedule.offset(l);
    const std::int64_t end = begin + e.schedule.level_size(l);
    const auto& g_own = model.level_likelihoods[l];
    const auto* g_below = l > 0 ? &model.level_likelihoods[l - 1] : nullptr;
    for (std::int64_t i = begin; i < end; ++i) {
      own[i] = g_own(e.states[i], obs_step);
      below[i] = g_below ? (*g_below)(e.states[i], obs_step) : neg_inf;
    }
  }

  e.raw_weights.resize(total);
  if (model.scale == LikelihoodScale::log_scale) {
    // One shared shift across every level of this step.
    double shift = neg_inf;
    for (std::int64_t i = 0; i < total; ++i) {
      if (std::isnan(own[i]) || own[i] == std::numeric_limits<double>::infinity()) {
        throw EvaluationError("non-finite log-likelihood", e.schedule.level_of(i), i);
      }
      if (std::isnan(below[i]) || below[i] == std::numeric_limits<double>::infinity()) {
        throw EvaluationError("non-finite log-likelihood", e.schedule.level_of(i) - 1, i);
      }
      shift = std::max(shift, std::max(own[i], below[i]));
    }
    if (shift == neg_inf) throw DegenerateEnsembleError("all likelihoods vanish");
    for (std::int64_t i = 0; i < total; ++i) {
      own[i] = std::exp(own[i] - shift);
      below[i] = std::exp(below[i] - shift);
    }
  } else {
    for (std::int64_t i = 0; i < total; ++i) {
      if (!std::isfinite(own[i]) || own[i] < 0.0) {
        throw EvaluationError("likelihood not finite and nonnegative",
                              e.schedule.level_of(i), i);
      }
      if (below[i] == neg_inf) {
        below[i] = 0.0;
      } else if (!std::isfinite(below[i]) || below[i] < 0.0) {
        throw EvaluationError("likelihood not finite and nonnegative",
                              e.schedule.level_of(i) - 1, i);
      }
    }
  }

  bool any_nonzero = false;
  for (int l = 0; l < model.levels(); ++l) {
    const std::int64_t begin = e.schedule.offset(l);
    const std::int64_t end = begin + e.schedule.level_size(l);
    const double denom = static_cast<double>(e.schedule.level_size(l));
    for (std::int64_t i = begin; i < end; ++i) {
      const double difference = (own[i] - below[i]) * static_cast<double>(e.signs[i]);
      const double w = difference / denom;
      e.raw_weights[i] = w;
      any_nonzero |= (w != 0.0);
    }
  }
  if (!any_nonzero) throw DegenerateEnsembleError("all telescoped weights are zero");
  return e;
}

struct ResampleDiagnostics {
  double cancellation = 1.0;       // |sum w| / sum |w| before resampling
  bool degenerate_warning = false;
  double negative_fraction = 0.0;  // share of -1 signs drawn
};

// Multinomial resampling proportional to the absolute telescoped weights,
// jointly over all levels. Each survivor takes the sign of the total weight
// attached to its state, with weights of bitwise-identical states summed
// before the sign is taken.
template <class State>
SignedEnsemble<State> resample(const SignedEnsemble<State>& e, std::uint64_t seed,
                               ResampleDiagnostics* diagnostics = nullptr) {
  if (!e.has_raw_weights()) throw std::logic_error("ensemble has no telescoped weights");
  const std::int64_t total = e.size();

  std::vector<double> cumulative(total);
  double running = 0.0;
  double signed_total = 0.0;
  for (std::int64_t i = 0; i < total; ++i) {
    running += std::abs(e.raw_weights[i]);
    cumulative[i] = running;
    signed_total += e.raw_weights[i];
  }
  if (running <= 0.0) throw DegenerateEnsembleError("total absolute weight is zero");

  ResampleDiagnostics diag;
  diag.cancellation = std::abs(signed_total) / running;
  diag.degenerate_warning = diag.cancellation < kNormalizerEpsilon;

  detail::StateAggregator<State> aggregated(e.states, e.raw_weights);

  SignedEnsemble<State> out;
  out.schedule = e.schedule;
  out.step_index = e.step_index;
  out.states.reserve(total);
  out.signs.resize(total);
  std::int64_t negatives = 0;
  for (std::int64_t i = 0; i < total; ++i) {
    RngStream rng = substream(seed, static_cast<std::uint64_t>(e.step_index), Phase::resample,
                              static_cast<std::uint64_t>(i));
    const double target = rng.uniform() * running;
    const std::int64_t k = detail::pick_index(cumulative, target);
    const double mass = aggregated.aggregated(static_cast<std::size_t>(k));
    if (mass == 0.0) {
      throw DegenerateEnsembleError("aggregated weight at a drawn state is zero");
    }
    const std::int8_t sign = mass > 0.0 ? std::int8_t{1} : std::int8_t{-1};
    out.states.push_back(e.states[k]);
    out.signs[i] = sign;
    negatives += (sign < 0);
  }
  diag.negative_fraction = static_cast<double>(negatives) / static_cast<double>(total);
  if (diagnostics) *diagnostics = diag;
  return out;
}

// Advances every particle through the transition kernel; signs are carried.
template <class State>
SignedEnsemble<State> mutate(SignedEnsemble<State> e, const HmmModel<State>& model,
                             std::uint64_t seed) {
  if (e.has_raw_weights()) throw std::logic_error("resample before mutating");
  const std::int64_t total = e.size();
  for (std::int64_t i = 0; i < total; ++i) {
    RngStream rng = substream(seed, static_cast<std::uint64_t>(e.step_index), Phase::mutate,
                              static_cast<std::uint64_t>(i));
    try {
      e.states[i] = model.sample_transition(e.states[i], rng);
    } catch (const std::exception& ex) {
      throw EvaluationError(std::string("transition failed: ") + ex.what(), -1, i);
    }
  }
  e.step_index += 1;
  return e;
}

// Self-normalized sign-weighted integral of a test function.
template <class State, class Fn>
double estimate(const SignedEnsemble<State>& e, Fn&& test_fn) {
  if (e.has_raw_weights()) throw std::logic_error("estimate uses sign weights; resample first");
  double num = 0.0;
  std::int64_t denom = 0;
  for (std::int64_t i = 0; i < e.size(); ++i) {
    num += static_cast<double>(e.signs[i]) * test_fn(e.states[i]);
    denom += e.signs[i];
  }
  if (denom == 0) throw EstimateDegenerateError("sign normalizer is zero");
  return num / static_cast<double>(denom);
}

// Level-restricted empirical measure applied to a test function, normalized by
// the level sample size. With absolute=true the sign weights enter by modulus.
template <class State, class Fn>
double level_measure(const SignedEnsemble<State>& e, int level, Fn&& test_fn, bool absolute) {
  const std::int64_t begin = e.schedule.offset(level);
  const std::int64_t end = begin + e.schedule.level_size(level);
  double acc = 0.0;
  for (std::int64_t i = begin; i < end; ++i) {
    const double w = absolute ? 1.0 : static_cast<double>(e.signs[i]);
    acc += w * test_fn(e.states[i]);
  }
  return acc / static_cast<double>(e.schedule.level_size(level));
}

namespace detail {

template <class State>
Eigen::VectorXd signed_mean(const SignedEnsemble<State>& e) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(state_dimension(e.states.front()));
  std::int64_t denom = 0;
  for (std::int64_t i = 0; i < e.size(); ++i) {
    state_accumulate(acc, e.states[i], static_cast<double>(e.signs[i]));
    denom += e.signs[i];
  }
  if (denom == 0) throw EstimateDegenerateError("sign normalizer is zero");
  return acc / static_cast<double>(denom);
}

template <class State>
Eigen::VectorXd preresample_mean(const SignedEnsemble<State>& e) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(state_dimension(e.states.front()));
  double denom = 0.0;
  for (std::int64_t i = 0; i < e.size(); ++i) {
    state_accumulate(acc, e.states[i], e.raw_weights[i]);
    denom += e.raw_weights[i];
  }
  if (denom == 0.0) {
    acc.setConstant(std::numeric_limits<double>::quiet_NaN());
    return acc;
  }
  return acc / denom;
}

}  // namespace detail

// Full filter loop: weight, resample, mutate, with per-step estimates and
// diagnostics. Deterministic given the seed.
template <class State>
std::vector<FilterEstimate> run_filter(const HmmModel<State>& model,
                                       const LevelSchedule& schedule, int n_steps,
                                       std::uint64_t seed) {
  if (n_steps < 0) throw ConfigError("negative step count");
  if (n_steps > model.num_observations) {
    throw ConfigError("model provides " + std::to_string(model.num_observations) +
                      " observations but " + std::to_string(n_steps) + " steps requested");
  }
  std::vector<FilterEstimate> estimates;
  if (n_steps == 0) return estimates;
  estimates.reserve(n_steps);

  using clock = std::chrono::steady_clock;
  SignedEnsemble<State> e = init(model, schedule, seed);
  for (int n = 0; n < n_steps; ++n) {
    try {
      const auto t0 = clock::now();
      FilterEstimate est;
      est.prediction_mean = detail::signed_mean(e);
      e = reweight(std::move(e), model, n);
      est.preresample_mean = detail::preresample_mean(e);
      ResampleDiagnostics diag;
      e = resample(e, seed, &diag);
      est.cancellation = diag.cancellation;
      est.degenerate_warning = diag.degenerate_warning;
      est.negative_fraction = diag.negative_fraction;
      est.filter_mean = detail::signed_mean(e);
      std::int64_t sign_sum = 0;
      for (std::int8_t s : e.signs) sign_sum += s;
      est.normalizer = static_cast<double>(sign_sum) / static_cast<double>(e.size());
      if (n + 1 < n_steps) e = mutate(std::move(e), model, seed);
      est.wall_clock = std::chrono::duration<double>(clock::now() - t0).count();
      estimates.push_back(std::move(est));
    } catch (const FilterStepError&) {
      throw;
    } catch (const std::exception& ex) {
      throw FilterStepError(n, ex.what());
    }
  }
  return estimates;
}

}  // namespace mlbpf
