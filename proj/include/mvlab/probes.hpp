#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvlab/attacks.hpp"
#include "mvlab/model.hpp"
#include "mvlab/multiview.hpp"

namespace mvlab {

struct FeatureId {
  std::uint32_t class_index = 0;  // j
  std::uint8_t which = 1;         // l in {1,2}

  friend bool operator==(const FeatureId& a, const FeatureId& b) {
    return a.class_index == b.class_index && a.which == b.which;
  }
};

// Which dictionary directions a model's hidden rows point at. Feature columns
// are indexed like FeatureBank rows: column 2j + (l-1) is feature (j, l).
struct AlignmentReport {
  Tensor cosines;                        // [m x 2k], entries in [-1, 1]
  std::vector<double> per_feature_max;   // columnwise max cosine, length 2k
  std::vector<double> per_feature_max_raw;  // columnwise max <w_i, v>, length 2k
  std::vector<FeatureId> learned_set;    // features with max cosine >= threshold
  std::vector<int> per_class_coverage;   // per class, how many of its 2 features
  std::vector<std::optional<std::size_t>> dominant;  // argmax |cosine| per neuron
  std::vector<double> mixture_mass;      // sum of |cosine| off the dominant one
  double threshold = 0.5;
};

AlignmentReport feature_alignment(const ModelParams& model,
                                  const FeatureBank& bank,
                                  double threshold = 0.5);

// Off-dominant absolute cosine mass per neuron; neurons with no dominant
// feature report their total mass.
std::vector<double> mixture_mass(
    const Tensor& cosines,
    const std::vector<std::optional<std::size_t>>& dominant);

// Mean (1 - softmax probability of the true class) on the clean inputs and on
// attacked inputs.
struct TrainingErrors {
  double clean_err = 0.0;
  double robust_err = 0.0;
};

TrainingErrors training_errors(const ModelParams& model, const Dataset& data,
                               const AttackConfig& attack, std::uint64_t seed);

// L2 mass of a perturbation inside and outside the dictionary span, plus its
// projection onto each feature direction.
struct PerturbationAlignment {
  std::vector<double> per_feature;  // <sum_p delta_p, v_f>, length 2k
  double in_span_mass = 0.0;
  double off_span_mass = 0.0;
};

PerturbationAlignment perturbation_alignment(const Tensor& delta,
                                             const FeatureBank& bank);

// Accuracy on single-view samples split by whether the feature the sample
// presents is in the learned set; counts included so empty cells read as
// absent rather than zero.
struct SingleViewReport {
  AlignmentReport alignment;
  std::size_t n_learned = 0;
  std::size_t n_not_learned = 0;
  std::optional<double> acc_learned;
  std::optional<double> acc_not_learned;
};

SingleViewReport single_view_learning_report(const ModelParams& model,
                                             const FeatureBank& bank,
                                             const Dataset& data,
                                             double threshold = 0.5);

nlohmann::json probe_report_json(const ModelParams& model,
                                 const FeatureBank& bank, const Dataset& data,
                                 double threshold = 0.5);

}  // namespace mvlab
