#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mvlab {

// Inputs to the closed-form robust/clean error analysis of a two-feature
// class under an L-inf adversary. `theta` is the learned feature magnitude,
// `k1`/`k2` the attack coefficients on the weak and strong directions, and
// `s_mix` the total off-class mixture mass the adversary can recruit.
struct ErrorModelParams {
  double mu = 0.4;
  double k1 = 0.3;
  double k2 = 0.8;
  double theta = 1.0;
  double s_mix = 3.0;
};

// Survival probabilities of a correct prediction under attack:
//   a: single learned feature attacked through the weak coefficient,
//   b: same feature attacked through the strong coefficient,
//   c: both features learned, multi-view input attacked.
struct LogisticTerms {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

struct ErrorReport {
  ErrorModelParams params;
  LogisticTerms terms;
  double r_robust_1 = 0.0;
  double r_robust_2 = 0.0;
  double r_clean_1 = 0.0;
  double r_clean_2 = 0.0;
  double delta_robust = 0.0;
  double delta_clean = 0.0;
  double incentive_gap = 0.0;
  bool learns_feature = false;
};

// Per-category mean errors recovered by enumerating a finite population with
// the exact category proportions. `composition_exact` is false when N is not
// divisible into the requested fractions.
struct FiniteNErrors {
  double r_robust_1 = 0.0;
  double r_robust_2 = 0.0;
  double r_clean_1 = 0.0;
  double r_clean_2 = 0.0;
  bool composition_exact = true;
};

// Throws InvalidParameterError unless mu in [0,1], k1,k2 in [0,1],
// theta > 0, s_mix >= 0, all finite.
void validate(const ErrorModelParams& p);

LogisticTerms logistic_terms(const ErrorModelParams& p);

// (r_robust_1, r_robust_2): robust error of the one-feature and the
// two-feature solution.
std::pair<double, double> robust_errors(const ErrorModelParams& p);

// (r_clean_1, r_clean_2) = (mu/2, 0) exactly.
std::pair<double, double> clean_errors(const ErrorModelParams& p);

// (1-mu)(a-c) - mu*b/2. Negative means the robust objective rewards
// learning the second feature.
double incentive_gap(const ErrorModelParams& p);

ErrorReport error_report(const ErrorModelParams& p);

// Enumerates N samples with the closed-form per-category errors; the seed
// only permutes enumeration order, which the means must not depend on.
FiniteNErrors finite_n_oracle(const ErrorModelParams& p, std::size_t n, std::uint64_t seed);

// Inclusive linear sweep over one parameter ("mu", "k1", "k2", "theta",
// "smix"); steps >= 2. Every grid point is validated.
std::vector<ErrorReport> sweep_error_model(const ErrorModelParams& base,
                                           const std::string& param, double lo, double hi,
                                           std::size_t steps);

// CSV with header param,a,b,c,r_robust_1,r_robust_2,r_clean_1,r_clean_2,
// delta_robust,delta_clean,incentive_gap,learns_feature.
std::string error_model_csv(const std::vector<ErrorReport>& reports,
                            const std::vector<double>& param_values);

}  // namespace mvlab
