#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mvlab/model.hpp"
#include "mvlab/multiview.hpp"

namespace mvlab {

// Objective the attacker climbs: cross-entropy against the hard label, or the
// divergence between the model's clean prediction and its prediction on the
// perturbed input.
enum class AttackObjective : std::uint8_t { kCrossEntropy = 0, kKlVsClean = 1 };

std::string attack_objective_name(AttackObjective o);
AttackObjective attack_objective_from_name(const std::string& name);

struct AttackConfig {
  double epsilon = 0.1;     // L-inf radius, input units
  double step_size = 0.0;   // 0 resolves to 2.5 * epsilon / max(steps, 1)
  int steps = 10;
  bool random_start = true;
  AttackObjective objective = AttackObjective::kCrossEntropy;
  // Per-coordinate clamp applied after each projection; absent by default
  // because the synthetic patches are unbounded.
  std::optional<std::pair<double, double>> clamp_box;

  double resolved_step() const;
};

void validate(const AttackConfig& cfg);

// Called after every PGD iterate (post projection/clamp) with the step index
// and the current point; lets tests assert ball containment mid-flight.
using StepHook = std::function<void(int step, const Tensor& x)>;

// x + epsilon * sign(grad_x loss); sign(0) = 0.
Tensor fgsm(const ModelParams& model, const AttackConfig& cfg,
            const Tensor& patches, std::uint32_t label);

// n-step L-inf PGD with optional uniform random start inside the ball and
// exact projection back onto it after every step.
Tensor pgd(const ModelParams& model, const AttackConfig& cfg,
           const Tensor& patches, std::uint32_t label, std::uint64_t seed,
           const StepHook* hook = nullptr);

// Per-sample PGD with seeds derived from (seed, index); order-independent.
std::vector<Tensor> attack_batch(const ModelParams& model,
                                 const AttackConfig& cfg,
                                 const std::vector<const DataPoint*>& batch,
                                 std::uint64_t seed);

}  // namespace mvlab
