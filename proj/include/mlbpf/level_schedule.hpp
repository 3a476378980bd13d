#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mlbpf/errors.hpp"

namespace mlbpf {

// Per-level sample-size multipliers c_0..c_L and the base size N. Level l is
// allocated c_l * N particles; the index ranges of consecutive levels
// partition [0, total_size()).
class LevelSchedule {
public:
  LevelSchedule() : multipliers_{1}, base_size_(1) { rebuild(); }

  LevelSchedule(std::vector<int> multipliers, std::int64_t base_size)
      : multipliers_(std::move(multipliers)), base_size_(base_size) {
    if (multipliers_.empty()) throw ConfigError("schedule needs at least one level");
    if (base_size_ <= 0) throw ConfigError("schedule base size must be positive");
    for (int c : multipliers_) {
      if (c < 1) throw ConfigError("level multipliers must be >= 1");
    }
    if (multipliers_.back() != 1) throw ConfigError("top-level multiplier must be 1");
    rebuild();
  }

  int levels() const { return static_cast<int>(multipliers_.size()); }
  int top_level() const { return levels() - 1; }
  std::int64_t base_size() const { return base_size_; }
  const std::vector<int>& multipliers() const { return multipliers_; }

  std::int64_t level_size(int level) const {
    check_level(level);
    return static_cast<std::int64_t>(multipliers_[level]) * base_size_;
  }

  // First particle index of the level.
  std::int64_t offset(int level) const {
    check_level(level);
    return offsets_[level];
  }

  std::int64_t total_size() const { return offsets_.back(); }

  int level_of(std::int64_t index) const {
    for (int l = 0; l < levels(); ++l) {
      if (index < offsets_[l + 1]) return l;
    }
    throw ConfigError("particle index out of range");
  }

  bool operator==(const LevelSchedule& other) const {
    return multipliers_ == other.multipliers_ && base_size_ == other.base_size_;
  }

private:
  void rebuild() {
    offsets_.assign(1, 0);
    for (int c : multipliers_) {
      offsets_.push_back(offsets_.back() + static_cast<std::int64_t>(c) * base_size_);
    }
  }

  void check_level(int level) const {
    if (level < 0 || level >= levels()) {
      throw ConfigError("level " + std::to_string(level) + " out of range");
    }
  }

  std::vector<int> multipliers_;
  std::int64_t base_size_;
  std::vector<std::int64_t> offsets_;
};

}  // namespace mlbpf
