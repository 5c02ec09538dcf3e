#pragma once

#include <array>
#include <cstdint>

namespace siap {

/// xoshiro256** seeded through splitmix64. Uniform and normal draws are
/// computed from the raw 64-bit stream only, so a seed reproduces the same
/// sequence on every platform (std:: distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer on [0, bound).
  std::uint64_t below(std::uint64_t bound);

 private:
  std::array<std::uint64_t, 4> s_{};
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// Derive an independent stream seed from (master, index); used for
/// per-replicate and per-fold streams so parallel order never matters.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace siap
