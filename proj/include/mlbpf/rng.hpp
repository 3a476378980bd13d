#pragma once

#include <cmath>
#include <cstdint>

namespace mlbpf {

// Counter-based stream derivation: every random draw in the library comes from
// a stream keyed by (root seed, step, phase, index). Streams are independent of
// evaluation order and worker count, so parallel execution cannot change results.

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// SplitMix64 finalizer (Stafford mix13).
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += kGolden;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

// Phases keep the substreams of one filter step disjoint.
enum class Phase : std::uint64_t {
  init = 1,
  resample = 2,
  mutate = 3,
  data = 4,
  matrix = 5,
  repeat = 6,
};

// A small keyed generator (SplitMix64 sequence). Cheap enough to construct
// per particle and per draw.
class RngStream {
public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t state) : state_(state) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~0ull; }

  result_type operator()() {
    state_ += detail::kGolden;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller on explicit uniforms; no library
  // distribution is used so sequences are identical across toolchains.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

private:
  std::uint64_t state_;
};

// Derives the stream key for (root, step, phase, index).
inline std::uint64_t stream_key(std::uint64_t root, std::uint64_t step, Phase phase,
                                std::uint64_t index) {
  std::uint64_t s = detail::mix64(root);
  s = detail::mix64(s ^ (step + 0x1000003ull));
  s = detail::mix64(s ^ (static_cast<std::uint64_t>(phase) * 0x100000001b3ull));
  s = detail::mix64(s ^ index);
  return s;
}

inline RngStream substream(std::uint64_t root, std::uint64_t step, Phase phase,
                           std::uint64_t index) {
  return RngStream(stream_key(root, step, phase, index));
}

// Folds extra identifiers (sequence, repeat, ...) into a root seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) {
  return detail::mix64(detail::mix64(root ^ (a * 0x9ddfea08eb382d69ull)) ^ b);
}

}  // namespace mlbpf
