#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace fixclr {

/// Seeded random stream used by every stochastic operation.
///
/// The contract is fixed so that other implementations can reproduce runs:
///  - engine: 64-bit Mersenne Twister (std::mt19937_64) seeded with the
///    64-bit stream seed;
///  - uniform(): top 53 bits of one draw scaled by 2^-53, in [0, 1);
///  - normal(): Box-Muller on (1 - uniform(), uniform()), both outputs used
///    in order (cosine branch first);
///  - below(n): rejection sampling on the top bits, unbiased;
///  - shuffle(): Fisher-Yates from the back, j = below(i + 1).
/// Sub-streams are derived with derive_seed(), a splitmix64 finalizer over
/// (seed, stream id), so independent consumers never share state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double normal();
  std::size_t below(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace fixclr
