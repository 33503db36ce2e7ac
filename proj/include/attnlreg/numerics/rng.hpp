#pragma once

#include <cstdint>

namespace alr {

// Counter-based generator: the n-th draw is splitmix64(seed + n * golden).
// Output depends only on (seed, counter), so streams are identical across
// runs, compilers and platforms. Distributions are implemented here rather
// than via <random> because the standard distributions are not portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) noexcept;

  // Standard normal via Box-Muller (one value per two uniforms, no caching
  // so the stream position is a pure function of the number of calls).
  double normal() noexcept;

  // Independent child stream; deterministic in (seed, stream id).
  Rng fork(std::uint64_t stream) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace alr
