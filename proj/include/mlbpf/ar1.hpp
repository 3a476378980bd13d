#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "mlbpf/errors.hpp"
#include "mlbpf/rng.hpp"

namespace mlbpf::models {

// Gaussian random-walk signal: X_0 ~ N(init_mean, sigma^2),
// X_n | X_{n-1} = x ~ N(x, sigma^2).
struct Ar1Signal {
  double init_mean = 0.0;
  double sigma = 0.1;
};

inline double ar1_prior(const Ar1Signal& signal, RngStream& rng) {
  if (signal.sigma < 0.0) throw ConfigError("signal noise must be nonnegative");
  return signal.init_mean + signal.sigma * rng.normal();
}

inline double ar1_step(double x, double sigma, RngStream& rng) {
  if (sigma < 0.0) throw ConfigError("signal noise must be nonnegative");
  return x + sigma * rng.normal();
}

// A realized signal path with its observations; regenerating with the same
// seed reproduces the data bit for bit.
struct SyntheticTrajectory {
  std::vector<double> states;
  std::vector<Eigen::VectorXd> observations;
  std::uint64_t seed = 0;
};

// obs_sampler: (state, step, rng) -> observation vector.
template <class ObsSampler>
SyntheticTrajectory simulate(const Ar1Signal& signal, int n_steps, ObsSampler&& obs_sampler,
                             std::uint64_t seed) {
  if (n_steps < 0) throw ConfigError("negative step count");
  SyntheticTrajectory traj;
  traj.seed = seed;
  traj.states.reserve(n_steps);
  traj.observations.reserve(n_steps);
  double x = 0.0;
  for (int n = 0; n < n_steps; ++n) {
    RngStream signal_rng = substream(seed, static_cast<std::uint64_t>(n), Phase::data, 0);
    x = n == 0 ? ar1_prior(signal, signal_rng) : ar1_step(x, signal.sigma, signal_rng);
    RngStream obs_rng = substream(seed, static_cast<std::uint64_t>(n), Phase::data, 1);
    traj.states.push_back(x);
    traj.observations.push_back(obs_sampler(x, n, obs_rng));
  }
  return traj;
}

}  // namespace mlbpf::models
