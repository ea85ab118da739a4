#include "mvlab/rng.hpp"

#include <cmath>
#include <numbers>

#include "mvlab/errors.hpp"

namespace mvlab {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key) {
  return mix64(mix64(base) ^ mix64(key * 0xA24BAED4963EE407ULL + 0x9FB21C651E98DF25ULL));
}

std::uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo <= hi)) throw InvalidParameterError("uniform: lo > hi");
  return lo + (hi - lo) * uniform01();
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw InvalidParameterError("uniform_int: n must be positive");
  const std::uint64_t bound = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
  std::uint64_t r = next_u64();
  while (r > bound) r = next_u64();
  return r % n;
}

bool Rng::bernoulli(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidParameterError("bernoulli: p outside [0,1]");
  return uniform01() < p;
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(angle);
  has_cached_normal_ = true;
  return r * std::cos(angle);
}

double Rng::normal(double mean, double stddev) {
  if (!(stddev >= 0.0)) throw InvalidParameterError("normal: stddev must be >= 0");
  return mean + stddev * normal();
}

std::vector<double> Rng::dirichlet_uniform(std::size_t n) {
  if (n == 0) throw InvalidParameterError("dirichlet_uniform: n must be positive");
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) {
    double u = uniform01();
    while (u <= 0.0) u = uniform01();
    x = -std::log(u);
    total += x;
  }
  for (auto& x : w) x /= total;
  return w;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_int(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace mvlab
