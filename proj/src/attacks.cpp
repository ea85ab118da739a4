#include "mvlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mvlab/errors.hpp"
#include "mvlab/graph.hpp"
#include "mvlab/rng.hpp"

namespace mvlab {

namespace {

constexpr double kProbFloor = 1e-12;

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Gradient of the attack objective with respect to the input patches.
// clean_probs is only consulted in KL mode and is computed from the
// unperturbed input once per attack.
Tensor input_gradient(const ModelParams& model, const AttackConfig& cfg,
                      const Tensor& patches, std::uint32_t label,
                      const std::vector<double>& clean_probs) {
  Graph g;
  ModelVars vars = declare_params(g, model, false);
  Graph::Var x = g.leaf(patches, true);
  Graph::Var logits = forward_graph(g, model.arch, vars, x);
  Graph::Var loss;
  if (cfg.objective == AttackObjective::kCrossEntropy) {
    if (label >= model.arch.k)
      throw IndexError("attack label out of range for k=" +
                       std::to_string(model.arch.k));
    loss = g.cross_entropy(logits, label);
  } else {
    // KL(clean || adv) in log space keeps the ascent direction alive even
    // once the perturbed prediction has left the clean argmax entirely.
    Graph::Var p = g.constant(Tensor::vector(clean_probs));
    Graph::Var log_p = g.constant([&] {
      Tensor t = Tensor::vector(clean_probs);
      for (double& v : t.values) v = std::log(std::max(v, kProbFloor));
      return t;
    }());
    loss = g.sum(g.mul(p, g.sub(log_p, g.log_softmax(logits))));
  }
  g.backward(loss);
  Tensor grad = g.grad(x);
  for (double v : grad.values)
    if (!std::isfinite(v))
      throw AttackFailureError("non-finite input gradient during attack");
  return grad;
}

void project_ball(Tensor& x, const Tensor& center, double epsilon) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double lo = center.values[i] - epsilon;
    const double hi = center.values[i] + epsilon;
    x.values[i] = std::min(std::max(x.values[i], lo), hi);
  }
}

void clamp_box(Tensor& x, const std::optional<std::pair<double, double>>& box) {
  if (!box) return;
  for (auto& v : x.values) v = std::min(std::max(v, box->first), box->second);
}

std::vector<double> clean_probabilities(const ModelParams& model,
                                        const Tensor& patches) {
  return softmax_values(forward_values(model, patches));
}

}  // namespace

std::string attack_objective_name(AttackObjective o) {
  return o == AttackObjective::kCrossEntropy ? "ce" : "kl";
}

AttackObjective attack_objective_from_name(const std::string& name) {
  if (name == "ce") return AttackObjective::kCrossEntropy;
  if (name == "kl") return AttackObjective::kKlVsClean;
  throw InvalidParameterError("unknown attack objective '" + name +
                              "' (expected ce or kl)");
}

double AttackConfig::resolved_step() const {
  if (step_size > 0.0) return step_size;
  return 2.5 * epsilon / static_cast<double>(std::max(steps, 1));
}

void validate(const AttackConfig& cfg) {
  if (!(cfg.epsilon >= 0.0) || !std::isfinite(cfg.epsilon))
    throw InvalidParameterError("attack epsilon must be finite and >= 0");
  if (cfg.steps < 0)
    throw InvalidParameterError("attack steps must be >= 0");
  if (cfg.step_size < 0.0 || !std::isfinite(cfg.step_size))
    throw InvalidParameterError("attack step_size must be finite and >= 0");
  if (cfg.steps > 0 && cfg.resolved_step() <= 0.0 && cfg.epsilon > 0.0)
    throw InvalidParameterError("attack step_size must be > 0 when steps > 0");
  if (cfg.clamp_box && !(cfg.clamp_box->first <= cfg.clamp_box->second))
    throw InvalidParameterError("attack clamp_box must satisfy lo <= hi");
}

Tensor fgsm(const ModelParams& model, const AttackConfig& cfg,
            const Tensor& patches, std::uint32_t label) {
  validate(cfg);
  if (cfg.epsilon == 0.0) return patches;
  const std::vector<double> clean_probs =
      cfg.objective == AttackObjective::kKlVsClean
          ? clean_probabilities(model, patches)
          : std::vector<double>{};
  const Tensor grad = input_gradient(model, cfg, patches, label, clean_probs);
  Tensor out = patches;
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.values[i] += cfg.epsilon * sign0(grad.values[i]);
  clamp_box(out, cfg.clamp_box);
  return out;
}

Tensor pgd(const ModelParams& model, const AttackConfig& cfg,
           const Tensor& patches, std::uint32_t label, std::uint64_t seed,
           const StepHook* hook) {
  validate(cfg);
  if (cfg.epsilon == 0.0 && !cfg.clamp_box) return patches;

  const std::vector<double> clean_probs =
      cfg.objective == AttackObjective::kKlVsClean
          ? clean_probabilities(model, patches)
          : std::vector<double>{};

  Tensor x = patches;
  if (cfg.random_start && cfg.epsilon > 0.0) {
    Rng rng(seed);
    for (auto& v : x.values) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
    clamp_box(x, cfg.clamp_box);
  }
  const double alpha = cfg.resolved_step();
  for (int step = 0; step < cfg.steps; ++step) {
    if (cfg.epsilon > 0.0) {
      const Tensor grad = input_gradient(model, cfg, x, label, clean_probs);
      for (std::size_t i = 0; i < x.numel(); ++i)
        x.values[i] += alpha * sign0(grad.values[i]);
      project_ball(x, patches, cfg.epsilon);
    }
    clamp_box(x, cfg.clamp_box);
    if (hook) (*hook)(step, x);
  }
  return x;
}

std::vector<Tensor> attack_batch(const ModelParams& model,
                                 const AttackConfig& cfg,
                                 const std::vector<const DataPoint*>& batch,
                                 std::uint64_t seed) {
  std::vector<Tensor> out;
  out.reserve(batch.size());
  std::vector<std::size_t> failed;
  std::string first_reason;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    try {
      out.push_back(pgd(model, cfg, batch[i]->patches, batch[i]->label,
                        derive_seed(seed, i)));
    } catch (const Error& e) {
      if (failed.empty()) first_reason = e.what();
      failed.push_back(i);
      out.push_back(batch[i]->patches);
    }
  }
  if (!failed.empty()) {
    std::ostringstream msg;
    msg << "attack failed for " << failed.size() << " sample(s) at indices [";
    for (std::size_t i = 0; i < failed.size() && i < 8; ++i)
      msg << (i ? "," : "") << failed[i];
    if (failed.size() > 8) msg << ",...";
    msg << "]: " << first_reason;
    throw AttackFailureError(msg.str());
  }
  return out;
}

}  // namespace mvlab
