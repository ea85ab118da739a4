#include "mvlab/multiview.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mvlab/errors.hpp"

namespace mvlab {

std::size_t FeatureBank::row(std::size_t class_index, std::size_t which) const {
  if (class_index >= k || which < 1 || which > 2)
    throw IndexError("feature bank: no feature (" + std::to_string(class_index) + "," +
                     std::to_string(which) + ")");
  return 2 * class_index + (which - 1);
}

FeatureBank build_feature_bank(std::size_t k, std::size_t d, std::uint64_t seed) {
  if (k == 0) throw InvalidParameterError("feature bank: k must be positive");
  if (d < 2 * k)
    throw InfeasibleOrthogonalityError("feature bank: need d >= 2k, got d=" +
                                       std::to_string(d) + ", k=" + std::to_string(k));
  FeatureBank bank;
  bank.k = k;
  bank.d = d;
  bank.vectors = Tensor::matrix(2 * k, d);
  Rng rng(derive_seed(seed, 0x66656174));  // feature stream

  // Gaussian rows orthonormalized by modified Gram-Schmidt, applied twice
  // for orthogonality at the 1e-15 level. A row that collapses is redrawn.
  for (std::size_t r = 0; r < 2 * k; ++r) {
    while (true) {
      std::vector<double> v(d);
      for (auto& x : v) x = rng.normal();
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t p = 0; p < r; ++p) {
          double dot = 0.0;
          for (std::size_t i = 0; i < d; ++i) dot += v[i] * bank.vectors.at(p, i);
          for (std::size_t i = 0; i < d; ++i) v[i] -= dot * bank.vectors.at(p, i);
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (std::size_t i = 0; i < d; ++i) bank.vectors.at(r, i) = v[i] / norm;
        break;
      }
    }
  }
  return bank;
}

double gram_deviation(const FeatureBank& bank) {
  const Tensor gram = matmul_values(bank.vectors, bank.vectors, false, true);
  double worst = 0.0;
  for (std::size_t i = 0; i < gram.rows(); ++i)
    for (std::size_t j = 0; j < gram.cols(); ++j)
      worst = std::max(worst, std::abs(gram.at(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

double DistributionConfig::gamma_resolved() const {
  if (gamma > 0.0) return gamma;
  return std::pow(static_cast<double>(k), -1.5);
}

void validate(const DistributionConfig& cfg) {
  if (cfg.k < 2) throw InvalidParameterError("distribution: k must be >= 2");
  if (cfg.d < 2 * cfg.k)
    throw InfeasibleOrthogonalityError("distribution: need d >= 2k");
  if (cfg.patches_per_feature == 0)
    throw InvalidParameterError("distribution: patches_per_feature must be >= 1");
  if (cfg.patches < 2 * cfg.patches_per_feature)
    throw InvalidParameterError(
        "distribution: both label features must fit, need P >= 2*C_p");
  if (!(cfg.mu >= 0.0 && cfg.mu <= 1.0))
    throw InvalidParameterError("distribution: mu must lie in [0,1]");
  const double s_cap = std::pow(static_cast<double>(cfg.k), 0.2);
  if (cfg.s != 0.0 && !(cfg.s >= 1.0 && cfg.s <= s_cap))
    throw InvalidParameterError("distribution: s must be 0 or in [1, k^0.2]");
  if (!(cfg.gamma >= 0.0) || !std::isfinite(cfg.gamma))
    throw InvalidParameterError("distribution: gamma must be >= 0 (0 selects k^-1.5)");
  if (!(cfg.rho > 0.0) || !std::isfinite(cfg.rho))
    throw InvalidParameterError("distribution: rho must be positive");
  if (!(cfg.noise_std >= 0.0) || !std::isfinite(cfg.noise_std))
    throw InvalidParameterError("distribution: noise_std must be >= 0");
  if (!(cfg.main_lo > 0.0) || !(cfg.main_lo <= cfg.main_hi) || !std::isfinite(cfg.main_hi))
    throw InvalidParameterError("distribution: need 0 < main_lo <= main_hi");
}

std::size_t Dataset::single_view_count() const {
  std::size_t n = 0;
  for (const auto& dp : samples) n += dp.view == View::kSingle ? 1 : 0;
  return n;
}

DataPoint sample_datapoint(const DistributionConfig& cfg, const FeatureBank& bank, Rng& rng) {
  if (bank.k != cfg.k || bank.d != cfg.d)
    throw ContractError("sample: feature bank does not match the configured k, d");
  DataPoint dp;
  dp.label = static_cast<std::uint32_t>(rng.uniform_int(cfg.k));
  const bool single = rng.bernoulli(cfg.mu);
  dp.view = single ? View::kSingle : View::kMulti;
  dp.single_which = single ? static_cast<std::uint8_t>(1 + rng.uniform_int(2)) : 0;

  // Off-class features, in (class, which) order.
  std::vector<std::pair<std::uint32_t, std::uint8_t>> off;
  if (cfg.s > 0.0) {
    const double p_off = cfg.s / static_cast<double>(cfg.k);
    for (std::uint32_t j = 0; j < cfg.k; ++j) {
      if (j == dp.label) continue;
      for (std::uint8_t l = 1; l <= 2; ++l)
        if (rng.bernoulli(p_off)) off.emplace_back(j, l);
    }
  }
  // Patch budget overflow: drop uniformly chosen off-class features.
  while ((2 + off.size()) * cfg.patches_per_feature > cfg.patches) {
    const std::size_t victim = static_cast<std::size_t>(rng.uniform_int(off.size()));
    off.erase(off.begin() + static_cast<std::ptrdiff_t>(victim));
    ++dp.dropped_off_class;
  }

  // Coefficient sums: label features first (l = 1 then 2), then off-class.
  dp.features.reserve(2 + off.size());
  for (std::uint8_t l = 1; l <= 2; ++l) {
    PlacedFeature f;
    f.class_index = dp.label;
    f.which = l;
    if (!single || l == dp.single_which)
      f.coeff_sum = rng.uniform(cfg.main_lo, cfg.main_hi);
    else
      f.coeff_sum = rng.uniform(cfg.weak_range().first, cfg.weak_range().second);
    dp.features.push_back(std::move(f));
  }
  const double gamma = cfg.gamma_resolved();
  for (const auto& [j, l] : off) {
    PlacedFeature f;
    f.class_index = j;
    f.which = l;
    f.coeff_sum = rng.uniform(gamma / 2.0, gamma);
    dp.features.push_back(std::move(f));
  }

  // Disjoint patch sets: consecutive chunks of one shared permutation.
  const auto perm = rng.permutation(cfg.patches);
  std::size_t cursor = 0;
  for (auto& f : dp.features) {
    f.patch_indices.reserve(cfg.patches_per_feature);
    for (std::size_t c = 0; c < cfg.patches_per_feature; ++c)
      f.patch_indices.push_back(static_cast<std::uint32_t>(perm[cursor++]));
  }

  dp.patches = Tensor::matrix(cfg.patches, cfg.d);
  for (const auto& f : dp.features) {
    const std::size_t row = bank.row(f.class_index, f.which);
    const auto weights = rng.dirichlet_uniform(cfg.patches_per_feature);
    for (std::size_t c = 0; c < f.patch_indices.size(); ++c) {
      const double z = f.coeff_sum * weights[c];
      double* dst = dp.patches.values.data() + f.patch_indices[c] * cfg.d;
      const double* src = bank.vectors.values.data() + row * cfg.d;
      for (std::size_t i = 0; i < cfg.d; ++i) dst[i] += z * src[i];
    }
  }

  if (cfg.noise_std > 0.0) {
    const double sd = cfg.noise_std / std::sqrt(static_cast<double>(cfg.d));
    for (auto& x : dp.patches.values) x += rng.normal(0.0, sd);
  }
  return dp;
}

Dataset sample_dataset(const DistributionConfig& cfg, const FeatureBank& bank, std::size_t n,
                       std::uint64_t seed) {
  validate(cfg);
  if (cfg.simplified)
    throw ContractError("sample_dataset: use sample_simplified for simplified configs");
  Dataset ds;
  ds.config = cfg;
  ds.bank = bank;
  ds.seed = seed;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    ds.samples.push_back(sample_datapoint(cfg, bank, rng));
    ds.dropped_off_class += ds.samples.back().dropped_off_class;
  }
  return ds;
}

Dataset sample_simplified(std::size_t k, double mu, std::size_t n, const FeatureBank& bank,
                          std::uint64_t seed) {
  if (bank.k != k) throw ContractError("sample_simplified: bank does not match k");
  DistributionConfig cfg;
  cfg.k = k;
  cfg.d = bank.d;
  cfg.patches = 2;
  cfg.patches_per_feature = 1;
  cfg.s = 0.0;
  cfg.mu = mu;
  cfg.rho = 0.1;
  cfg.noise_std = 0.0;
  cfg.main_lo = 1.0;
  cfg.main_hi = 1.0;
  cfg.simplified = true;
  validate(cfg);

  Dataset ds;
  ds.config = cfg;
  ds.bank = bank;
  ds.seed = seed;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    DataPoint dp;
    dp.label = static_cast<std::uint32_t>(rng.uniform_int(k));
    const bool single = rng.bernoulli(mu);
    dp.view = single ? View::kSingle : View::kMulti;
    dp.single_which = single ? static_cast<std::uint8_t>(1 + rng.uniform_int(2)) : 0;
    dp.patches = Tensor::matrix(2, bank.d);
    const auto perm = rng.permutation(2);
    auto place = [&](std::uint8_t which, std::size_t patch) {
      PlacedFeature f;
      f.class_index = dp.label;
      f.which = which;
      f.coeff_sum = 1.0;
      f.patch_indices = {static_cast<std::uint32_t>(patch)};
      const double* src = bank.vectors.values.data() + bank.row(dp.label, which) * bank.d;
      double* dst = dp.patches.values.data() + patch * bank.d;
      for (std::size_t i = 0; i < bank.d; ++i) dst[i] += src[i];
      dp.features.push_back(std::move(f));
    };
    if (single) {
      place(dp.single_which, perm[0]);
    } else {
      place(1, perm[0]);
      place(2, perm[1]);
    }
    ds.samples.push_back(std::move(dp));
  }
  return ds;
}

std::vector<double> patch_coefficients(const DataPoint& dp, const FeatureBank& bank) {
  if (dp.patches.cols() != bank.d)
    throw ContractError("patch_coefficients: dimension mismatch");
  // [P x d] x [2k x d]^T, summed over patches.
  const Tensor prods = matmul_values(dp.patches, bank.vectors, false, true);
  std::vector<double> sums(bank.feature_count(), 0.0);
  for (std::size_t p = 0; p < prods.rows(); ++p)
    for (std::size_t f = 0; f < prods.cols(); ++f) sums[f] += prods.at(p, f);
  return sums;
}

ConformanceReport check_conformance(const Dataset& ds) {
  const DistributionConfig& cfg = ds.config;
  ConformanceReport rep;
  const double gamma = cfg.gamma_resolved();
  const auto [weak_lo, weak_hi] = cfg.weak_range();
  for (const auto& dp : ds.samples) {
    std::set<std::uint32_t> used;
    std::size_t label_features = 0;
    for (const auto& f : dp.features) {
      const bool is_label = f.class_index == dp.label;
      label_features += is_label ? 1 : 0;
      double lo, hi;
      if (!is_label) {
        lo = gamma / 2.0;
        hi = gamma;
      } else if (dp.view == View::kSingle && f.which != dp.single_which) {
        lo = weak_lo;
        hi = weak_hi;
      } else {
        lo = cfg.main_lo;
        hi = cfg.main_hi;
      }
      if (!(f.coeff_sum >= lo && f.coeff_sum <= hi)) ++rep.range_violations;

      const std::size_t expected =
          cfg.simplified ? 1 : cfg.patches_per_feature;
      if (f.patch_indices.size() != expected) ++rep.placement_violations;
      for (const auto idx : f.patch_indices) {
        if (idx >= cfg.patches) ++rep.placement_violations;
        if (!used.insert(idx).second) ++rep.disjointness_violations;
      }
    }
    const std::size_t expected_label = cfg.simplified && dp.view == View::kSingle ? 1 : 2;
    if (label_features != expected_label) ++rep.bookkeeping_violations;
    if (dp.view == View::kSingle) {
      if (dp.single_which != 1 && dp.single_which != 2) ++rep.bookkeeping_violations;
    } else if (dp.single_which != 0) {
      ++rep.bookkeeping_violations;
    }
    if (dp.label >= cfg.k) ++rep.bookkeeping_violations;
  }
  if (!ds.samples.empty())
    rep.single_view_fraction = static_cast<double>(ds.single_view_count()) /
                               static_cast<double>(ds.samples.size());
  return rep;
}

}  // namespace mvlab
