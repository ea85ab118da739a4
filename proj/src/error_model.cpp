#include "mvlab/error_model.hpp"

#include <cmath>
#include <cstdio>

#include "mvlab/errors.hpp"
#include "mvlab/rng.hpp"

namespace mvlab {

namespace {

// Overflow-safe logistic; equals e^u/(e^u+e^v) for u = z + v.
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double kahan_mean(const std::vector<double>& xs) {
  double sum = 0.0, comp = 0.0;
  for (double x : xs) {
    const double y = x - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum / static_cast<double>(xs.size());
}

}  // namespace

void validate(const ErrorModelParams& p) {
  if (!std::isfinite(p.mu) || p.mu < 0.0 || p.mu > 1.0)
    throw InvalidParameterError("error model: mu must lie in [0,1]");
  if (!std::isfinite(p.k1) || p.k1 < 0.0 || p.k1 > 1.0)
    throw InvalidParameterError("error model: k1 must lie in [0,1]");
  if (!std::isfinite(p.k2) || p.k2 < 0.0 || p.k2 > 1.0)
    throw InvalidParameterError("error model: k2 must lie in [0,1]");
  if (!std::isfinite(p.theta) || p.theta <= 0.0)
    throw InvalidParameterError("error model: theta must be positive");
  if (!std::isfinite(p.s_mix) || p.s_mix < 0.0)
    throw InvalidParameterError("error model: s_mix must be >= 0");
}

LogisticTerms logistic_terms(const ErrorModelParams& p) {
  validate(p);
  LogisticTerms t;
  t.a = sigmoid(p.theta - p.k1 * p.s_mix);
  t.b = sigmoid(p.theta - p.k2 * p.s_mix);
  // Two learned features double the clean margin, but the adversary keeps
  // its purchase on the weak coefficient: e^{2theta}/(e^{2theta} +
  // e^{k1*s_mix + 2theta}).
  t.c = sigmoid(-p.k1 * p.s_mix);
  return t;
}

std::pair<double, double> robust_errors(const ErrorModelParams& p) {
  const LogisticTerms t = logistic_terms(p);
  const double r1 = 0.5 * p.mu * (2.0 - t.a) + (1.0 - p.mu) * (1.0 - t.a);
  const double r2 =
      0.5 * p.mu * (1.0 - t.b) + 0.5 * p.mu * (1.0 - t.a) + (1.0 - p.mu) * (1.0 - t.c);
  return {r1, r2};
}

std::pair<double, double> clean_errors(const ErrorModelParams& p) {
  validate(p);
  return {0.5 * p.mu, 0.0};
}

double incentive_gap(const ErrorModelParams& p) {
  const LogisticTerms t = logistic_terms(p);
  return (1.0 - p.mu) * (t.a - t.c) - 0.5 * p.mu * t.b;
}

ErrorReport error_report(const ErrorModelParams& p) {
  ErrorReport r;
  r.params = p;
  r.terms = logistic_terms(p);
  const auto robust = robust_errors(p);
  const auto clean = clean_errors(p);
  r.r_robust_1 = robust.first;
  r.r_robust_2 = robust.second;
  r.r_clean_1 = clean.first;
  r.r_clean_2 = clean.second;
  r.delta_robust = robust.second - robust.first;
  r.delta_clean = clean.second - clean.first;
  r.incentive_gap = incentive_gap(p);
  r.learns_feature = r.incentive_gap < 0.0;
  return r;
}

FiniteNErrors finite_n_oracle(const ErrorModelParams& p, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidParameterError("finite_n_oracle: n must be positive");
  const LogisticTerms t = logistic_terms(p);

  const double half_single = 0.5 * p.mu * static_cast<double>(n);
  const std::size_t n_sv1 = static_cast<std::size_t>(std::llround(half_single));
  const std::size_t n_sv2 = n_sv1;
  if (n_sv1 + n_sv2 > n)
    throw InvalidParameterError("finite_n_oracle: composition exceeds population");
  const std::size_t n_mv = n - n_sv1 - n_sv2;

  FiniteNErrors out;
  out.composition_exact = std::abs(half_single - static_cast<double>(n_sv1)) < 1e-9;

  // Category error of each sample; enumeration order is shuffled by the
  // seed to demonstrate order independence of the means.
  std::vector<double> rob1(n), rob2(n), cl1(n), cl2(n);
  std::size_t idx = 0;
  for (std::size_t i = 0; i < n_sv1; ++i, ++idx) {
    rob1[idx] = 1.0 - t.a;
    rob2[idx] = 1.0 - t.b;
    cl1[idx] = 0.0;
    cl2[idx] = 0.0;
  }
  for (std::size_t i = 0; i < n_sv2; ++i, ++idx) {
    rob1[idx] = 1.0;
    rob2[idx] = 1.0 - t.a;
    cl1[idx] = 1.0;
    cl2[idx] = 0.0;
  }
  for (std::size_t i = 0; i < n_mv; ++i, ++idx) {
    rob1[idx] = 1.0 - t.a;
    rob2[idx] = 1.0 - t.c;
    cl1[idx] = 0.0;
    cl2[idx] = 0.0;
  }

  const auto order = Rng(seed).permutation(n);
  auto mean_in_order = [&](const std::vector<double>& xs) {
    std::vector<double> shuffled(n);
    for (std::size_t i = 0; i < n; ++i) shuffled[i] = xs[order[i]];
    return kahan_mean(shuffled);
  };
  out.r_robust_1 = mean_in_order(rob1);
  out.r_robust_2 = mean_in_order(rob2);
  out.r_clean_1 = mean_in_order(cl1);
  out.r_clean_2 = mean_in_order(cl2);
  return out;
}

std::vector<ErrorReport> sweep_error_model(const ErrorModelParams& base,
                                           const std::string& param, double lo, double hi,
                                           std::size_t steps) {
  if (steps < 2) throw InvalidParameterError("sweep: steps must be >= 2");
  if (!(lo <= hi)) throw InvalidParameterError("sweep: lo must be <= hi");
  std::vector<ErrorReport> out;
  out.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double v =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
    ErrorModelParams p = base;
    if (param == "mu")
      p.mu = v;
    else if (param == "k1")
      p.k1 = v;
    else if (param == "k2")
      p.k2 = v;
    else if (param == "theta")
      p.theta = v;
    else if (param == "smix")
      p.s_mix = v;
    else
      throw InvalidParameterError("sweep: unknown parameter '" + param + "'");
    out.push_back(error_report(p));
  }
  return out;
}

std::string error_model_csv(const std::vector<ErrorReport>& reports,
                            const std::vector<double>& param_values) {
  if (reports.size() != param_values.size())
    throw ContractError("error_model_csv: length mismatch");
  std::string csv =
      "param,a,b,c,r_robust_1,r_robust_2,r_clean_1,r_clean_2,delta_robust,delta_clean,"
      "incentive_gap,learns_feature\n";
  char line[512];
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const ErrorReport& r = reports[i];
    std::snprintf(line, sizeof line,
                  "%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%d\n",
                  param_values[i], r.terms.a, r.terms.b, r.terms.c, r.r_robust_1,
                  r.r_robust_2, r.r_clean_1, r.r_clean_2, r.delta_robust, r.delta_clean,
                  r.incentive_gap, r.learns_feature ? 1 : 0);
    csv += line;
  }
  return csv;
}

}  // namespace mvlab
