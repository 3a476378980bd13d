#pragma once

#include <Eigen/Core>
#include <bit>
#include <cstdint>
#include <cstring>
#include <utility>
#include <vector>

#include "mlbpf/level_schedule.hpp"

namespace mlbpf {

// State customization points. The engine is generic over the state type; it
// needs a bitwise identity (duplicate-state aggregation groups on exact
// equality), a hash consistent with that identity, and a dense view for means.

inline std::uint64_t state_hash_key(double s) { return std::bit_cast<std::uint64_t>(s); }

inline bool state_identical(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

inline int state_dimension(double) { return 1; }

inline void state_accumulate(Eigen::VectorXd& acc, double s, double w) { acc[0] += w * s; }

inline std::uint64_t state_hash_key(const Eigen::VectorXd& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    h = (h ^ std::bit_cast<std::uint64_t>(s[i])) * 0x100000001b3ull;
  }
  return h;
}

inline bool state_identical(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

inline int state_dimension(const Eigen::VectorXd& s) { return static_cast<int>(s.size()); }

inline void state_accumulate(Eigen::VectorXd& acc, const Eigen::VectorXd& s, double w) {
  acc += w * s;
}

// Particle system with sign weights. Between reweighting and resampling the
// telescoped weights are held in raw_weights; at all other times weights are
// the signs alone.
template <class State>
struct SignedEnsemble {
  std::vector<State> states;
  std::vector<std::int8_t> signs;    // each +1 or -1
  std::vector<double> raw_weights;   // empty outside the reweight->resample window
  LevelSchedule schedule;
  int step_index = 0;

  bool has_raw_weights() const { return !raw_weights.empty(); }
  std::int64_t size() const { return static_cast<std::int64_t>(states.size()); }
};

// One level of an ensemble seen as atoms of a signed measure.
template <class State>
struct SignedMeasureView {
  int level = 0;
  std::vector<std::pair<State, double>> atoms;
};

template <class State>
SignedMeasureView<State> level_view(const SignedEnsemble<State>& e, int level) {
  const std::int64_t begin = e.schedule.offset(level);
  const std::int64_t end = begin + e.schedule.level_size(level);
  SignedMeasureView<State> view;
  view.level = level;
  view.atoms.reserve(end - begin);
  const double unit = 1.0 / static_cast<double>(e.schedule.level_size(level));
  for (std::int64_t i = begin; i < end; ++i) {
    const double w = e.has_raw_weights() ? e.raw_weights[i] : e.signs[i] * unit;
    view.atoms.emplace_back(e.states[i], w);
  }
  return view;
}

}  // namespace mlbpf
