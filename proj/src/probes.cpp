#include "mvlab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvlab/errors.hpp"
#include "mvlab/graph.hpp"
#include "mvlab/rng.hpp"

namespace mvlab {

namespace {

std::size_t argmax_index(const std::vector<double>& v) {
  return static_cast<std::size_t>(
      std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

AlignmentReport feature_alignment(const ModelParams& model,
                                  const FeatureBank& bank, double threshold) {
  if (model.arch.d != bank.d)
    throw ContractError("model dimension " + std::to_string(model.arch.d) +
                        " does not match bank dimension " +
                        std::to_string(bank.d));
  const std::size_t m = model.arch.hidden;
  const std::size_t f = bank.feature_count();

  AlignmentReport rep;
  rep.threshold = threshold;
  rep.cosines = Tensor::matrix(m, f);
  Tensor raw = matmul_values(model.hidden, bank.vectors, false, true);  // [m x 2k]
  rep.per_feature_max.assign(f, -1.0);
  rep.per_feature_max_raw.assign(f, -std::numeric_limits<double>::infinity());

  rep.dominant.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < model.arch.d; ++j)
      norm_sq += model.hidden.at(i, j) * model.hidden.at(i, j);
    const double norm = std::sqrt(norm_sq);
    double best_abs = 0.0;
    bool any = norm > 0.0;
    std::size_t best = 0;
    for (std::size_t g = 0; g < f; ++g) {
      const double cosv = norm > 0.0 ? raw.at(i, g) / norm : 0.0;
      rep.cosines.at(i, g) = cosv;
      rep.per_feature_max[g] = std::max(rep.per_feature_max[g], cosv);
      rep.per_feature_max_raw[g] = std::max(rep.per_feature_max_raw[g], raw.at(i, g));
      if (std::abs(cosv) >= best_abs) {
        best_abs = std::abs(cosv);
        best = g;
      }
    }
    rep.dominant[i] = any ? std::optional<std::size_t>(best) : std::nullopt;
  }

  rep.per_class_coverage.assign(bank.k, 0);
  for (std::size_t g = 0; g < f; ++g) {
    if (rep.per_feature_max[g] >= threshold) {
      const auto j = static_cast<std::uint32_t>(g / 2);
      const auto l = static_cast<std::uint8_t>(g % 2 + 1);
      rep.learned_set.push_back({j, l});
      rep.per_class_coverage[j] += 1;
    }
  }
  rep.mixture_mass = mixture_mass(rep.cosines, rep.dominant);
  return rep;
}

std::vector<double> mixture_mass(
    const Tensor& cosines,
    const std::vector<std::optional<std::size_t>>& dominant) {
  if (cosines.rank() != 2)
    throw ContractError("mixture_mass expects a rank-2 cosine matrix");
  if (dominant.size() != cosines.rows())
    throw ContractError("dominant assignment size does not match neuron count");
  std::vector<double> mass(cosines.rows(), 0.0);
  for (std::size_t i = 0; i < cosines.rows(); ++i) {
    double total = 0.0;
    for (std::size_t g = 0; g < cosines.cols(); ++g)
      total += std::abs(cosines.at(i, g));
    if (dominant[i]) total -= std::abs(cosines.at(i, *dominant[i]));
    mass[i] = total;
  }
  return mass;
}

TrainingErrors training_errors(const ModelParams& model, const Dataset& data,
                               const AttackConfig& attack, std::uint64_t seed) {
  if (data.samples.empty())
    throw InvalidInputError("training_errors needs a nonempty dataset");
  TrainingErrors out;
  double clean_sum = 0.0, robust_sum = 0.0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const DataPoint& s = data.samples[i];
    const auto clean_probs = softmax_values(forward_values(model, s.patches));
    clean_sum += 1.0 - clean_probs[s.label];
    const Tensor adv =
        pgd(model, attack, s.patches, s.label, derive_seed(seed, i));
    const auto adv_probs = softmax_values(forward_values(model, adv));
    robust_sum += 1.0 - adv_probs[s.label];
  }
  out.clean_err = clean_sum / static_cast<double>(data.samples.size());
  out.robust_err = robust_sum / static_cast<double>(data.samples.size());
  return out;
}

PerturbationAlignment perturbation_alignment(const Tensor& delta,
                                             const FeatureBank& bank) {
  if (delta.rank() != 2 || delta.cols() != bank.d)
    throw ContractError("perturbation must be [P x d] with d matching the bank");
  std::vector<double> summed(bank.d, 0.0);
  for (std::size_t p = 0; p < delta.rows(); ++p)
    for (std::size_t j = 0; j < bank.d; ++j) summed[j] += delta.at(p, j);

  PerturbationAlignment out;
  out.per_feature.assign(bank.feature_count(), 0.0);
  double total_sq = 0.0;
  for (double v : summed) total_sq += v * v;
  double in_sq = 0.0;
  for (std::size_t g = 0; g < bank.feature_count(); ++g) {
    double proj = 0.0;
    for (std::size_t j = 0; j < bank.d; ++j)
      proj += summed[j] * bank.vectors.at(g, j);
    out.per_feature[g] = proj;
    in_sq += proj * proj;
  }
  out.in_span_mass = std::sqrt(in_sq);
  out.off_span_mass = std::sqrt(std::max(0.0, total_sq - in_sq));
  return out;
}

SingleViewReport single_view_learning_report(const ModelParams& model,
                                             const FeatureBank& bank,
                                             const Dataset& data,
                                             double threshold) {
  SingleViewReport rep;
  rep.alignment = feature_alignment(model, bank, threshold);
  std::size_t hit_learned = 0, hit_not = 0;
  for (const DataPoint& s : data.samples) {
    if (s.view != View::kSingle) continue;
    const FeatureId shown{s.label, s.single_which};
    const bool learned =
        std::find(rep.alignment.learned_set.begin(),
                  rep.alignment.learned_set.end(),
                  shown) != rep.alignment.learned_set.end();
    const auto logits = forward_values(model, s.patches);
    const bool correct =
        argmax_index(logits) == static_cast<std::size_t>(s.label);
    if (learned) {
      rep.n_learned += 1;
      hit_learned += correct ? 1 : 0;
    } else {
      rep.n_not_learned += 1;
      hit_not += correct ? 1 : 0;
    }
  }
  if (rep.n_learned > 0)
    rep.acc_learned = static_cast<double>(hit_learned) /
                      static_cast<double>(rep.n_learned);
  if (rep.n_not_learned > 0)
    rep.acc_not_learned = static_cast<double>(hit_not) /
                          static_cast<double>(rep.n_not_learned);
  return rep;
}

nlohmann::json probe_report_json(const ModelParams& model,
                                 const FeatureBank& bank, const Dataset& data,
                                 double threshold) {
  const SingleViewReport rep =
      single_view_learning_report(model, bank, data, threshold);
  const AlignmentReport& al = rep.alignment;

  nlohmann::json cosines = nlohmann::json::array();
  for (std::size_t i = 0; i < al.cosines.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t g = 0; g < al.cosines.cols(); ++g)
      row.push_back(al.cosines.at(i, g));
    cosines.push_back(std::move(row));
  }
  nlohmann::json learned = nlohmann::json::array();
  for (const FeatureId& f : al.learned_set)
    learned.push_back({f.class_index, f.which});

  nlohmann::json sv;
  sv["n_learned"] = rep.n_learned;
  sv["n_not_learned"] = rep.n_not_learned;
  sv["learned"] = rep.acc_learned ? nlohmann::json(*rep.acc_learned)
                                  : nlohmann::json(nullptr);
  sv["not_learned"] = rep.acc_not_learned ? nlohmann::json(*rep.acc_not_learned)
                                          : nlohmann::json(nullptr);

  nlohmann::json out;
  out["threshold"] = threshold;
  out["cosines"] = std::move(cosines);
  out["learned_set"] = std::move(learned);
  out["per_class_coverage"] = al.per_class_coverage;
  out["mixture_mass"] = al.mixture_mass;
  out["per_feature_max"] = al.per_feature_max;
  out["per_feature_max_raw"] = al.per_feature_max_raw;
  out["sv_accuracy_by_learned_status"] = std::move(sv);
  return out;
}

}  // namespace mvlab
