#pragma once

#include <cstdint>
#include <vector>

namespace mvlab {

// splitmix64 finalizer; also used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t z);

// Derives the seed for sub-stream `key` of `base`. Samplers give every
// sample its own stream keyed by its index, so parallel generation with any
// scheduling produces exactly the serial result.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key);

// Deterministic generator with explicitly specified distributions. The
// standard library's distribution objects are implementation-defined, which
// would break seed-stable artifacts across toolchains; these are pinned.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform on [0,1) with 53 random bits.
  double uniform01();

  // Uniform on [lo,hi).
  double uniform(double lo, double hi);

  // Unbiased integer in [0,n), n >= 1, by rejection.
  std::uint64_t uniform_int(std::uint64_t n);

  bool bernoulli(double p);

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();

  double normal(double mean, double stddev);

  // Symmetric Dirichlet(1,...,1): n positive weights summing to 1.
  std::vector<double> dirichlet_uniform(std::size_t n);

  // Fisher-Yates shuffle of indices 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t state_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace mvlab
