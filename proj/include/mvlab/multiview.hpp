#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mvlab/rng.hpp"
#include "mvlab/tensor.hpp"

namespace mvlab {

// Orthonormal dictionary of 2k feature directions in R^d, two per class.
// Row layout: feature (j, l) lives at row 2j + (l-1), l in {1,2}.
struct FeatureBank {
  std::size_t k = 0;
  std::size_t d = 0;
  Tensor vectors;  // [2k x d]

  std::size_t row(std::size_t class_index, std::size_t which) const;
  std::size_t feature_count() const { return 2 * k; }
};

// Throws InfeasibleOrthogonalityError when d < 2k.
FeatureBank build_feature_bank(std::size_t k, std::size_t d, std::uint64_t seed);

// Largest absolute off-diagonal / diagonal-deviation entry of V V^T - I.
double gram_deviation(const FeatureBank& bank);

enum class View : std::uint8_t { kMulti = 0, kSingle = 1 };

struct PlacedFeature {
  std::uint32_t class_index = 0;  // j
  std::uint8_t which = 0;         // l in {1,2}
  double coeff_sum = 0.0;
  std::vector<std::uint32_t> patch_indices;
};

struct DataPoint {
  std::uint32_t label = 0;
  View view = View::kMulti;
  std::uint8_t single_which = 0;  // 0 for multi-view samples
  Tensor patches;                 // [P x d]
  std::vector<PlacedFeature> features;
  std::uint32_t dropped_off_class = 0;
};

struct DistributionConfig {
  std::size_t k = 5;
  std::size_t d = 30;
  std::size_t patches = 25;             // P
  std::size_t patches_per_feature = 2;  // C_p
  double s = 1.0;                       // off-class features appear w.p. s/k
  double mu = 0.4;                      // single-view mass
  double gamma = 0.0;                   // off-class sum range [gamma/2, gamma]; 0 -> k^-1.5
  double rho = 0.1;                     // weak coefficient range [rho, 1.2 rho]
  double noise_std = 0.05;              // per-coordinate sd is noise_std/sqrt(d)
  double main_lo = 1.0;                 // label feature sum range
  double main_hi = 2.0;
  bool simplified = false;

  double gamma_resolved() const;
  std::pair<double, double> weak_range() const { return {rho, 1.2 * rho}; }
};

void validate(const DistributionConfig& cfg);

struct Dataset {
  DistributionConfig config;
  FeatureBank bank;
  std::vector<DataPoint> samples;
  std::uint64_t seed = 0;
  std::size_t dropped_off_class = 0;

  std::size_t size() const { return samples.size(); }
  std::size_t single_view_count() const;
};

// One draw from the full distribution. The rng should be a per-sample
// stream; sample_dataset derives one per index so that any parallel
// schedule reproduces serial output.
DataPoint sample_datapoint(const DistributionConfig& cfg, const FeatureBank& bank, Rng& rng);

Dataset sample_dataset(const DistributionConfig& cfg, const FeatureBank& bank, std::size_t n,
                       std::uint64_t seed);

// Idealized two-patch variant: label features carry weight exactly 1, one
// patch each, no noise, no off-class features; single-view samples contain
// only their surviving feature.
Dataset sample_simplified(std::size_t k, double mu, std::size_t n, const FeatureBank& bank,
                          std::uint64_t seed);

// Sum over patches of <x_p, v_f> for every bank row f; recovers stored
// coefficient sums up to noise.
std::vector<double> patch_coefficients(const DataPoint& dp, const FeatureBank& bank);

struct ConformanceReport {
  std::size_t range_violations = 0;
  std::size_t disjointness_violations = 0;
  std::size_t placement_violations = 0;
  std::size_t bookkeeping_violations = 0;
  double single_view_fraction = 0.0;
  bool ok() const {
    return range_violations == 0 && disjointness_violations == 0 &&
           placement_violations == 0 && bookkeeping_violations == 0;
  }
};

ConformanceReport check_conformance(const Dataset& ds);

}  // namespace mvlab
