#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace metasets {

// Seeded random stream used by every stochastic operation.
//
// Draws are computed from the raw 64-bit engine output rather than the
// <random> distributions so that a seed reproduces the same values on any
// standard library. `fork` derives an independent child stream from a tag;
// the parent is left untouched, so adding a new consumer never shifts the
// draws seen by existing ones.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  // Standard normal (Box-Muller, no cached second value).
  double normal();

  Rng fork(std::string_view tag) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer; used for seed derivation.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace metasets
