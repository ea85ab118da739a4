#include "mvlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "mvlab/errors.hpp"
#include "mvlab/rng.hpp"

namespace mvlab {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu:
      return "relu";
    case Activation::kCubicRamp:
      return "cubic";
  }
  throw ContractError("unknown activation");
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "cubic") return Activation::kCubicRamp;
  throw InvalidParameterError("unknown activation '" + name + "' (relu, cubic)");
}

void validate(const ModelArch& arch) {
  if (arch.k < 2) throw InvalidParameterError("model: k must be >= 2");
  if (arch.d == 0 || arch.patches == 0 || arch.hidden == 0)
    throw InvalidParameterError("model: d, patches, hidden must be positive");
}

std::size_t ModelParams::parameter_count() const {
  return hidden.numel() + head.numel() + bias.numel();
}

ModelParams init_model(const ModelArch& arch, std::uint64_t seed) {
  validate(arch);
  ModelParams m;
  m.arch = arch;
  m.hidden = Tensor::matrix(arch.hidden, arch.d);
  m.head = Tensor::matrix(arch.k, arch.hidden);
  m.bias = Tensor::zeros({arch.k});
  Rng hidden_rng(derive_seed(seed, 1));
  const double hidden_sd = std::sqrt(2.0 / static_cast<double>(arch.d));
  for (auto& w : m.hidden.values) w = hidden_rng.normal(0.0, hidden_sd);
  Rng head_rng(derive_seed(seed, 2));
  const double head_sd = std::sqrt(2.0 / static_cast<double>(arch.hidden));
  for (auto& w : m.head.values) w = head_rng.normal(0.0, head_sd);
  return m;
}

namespace {

void check_patches(const ModelArch& arch, const Tensor& patches) {
  if (patches.rank() != 2 || patches.rows() != arch.patches || patches.cols() != arch.d)
    throw ContractError("model forward: patches must be [P x d] = [" +
                        std::to_string(arch.patches) + " x " + std::to_string(arch.d) +
                        "], got " + patches.shape_str());
}

double apply_activation(Activation a, double z) {
  if (a == Activation::kRelu) return z > 0.0 ? z : 0.0;
  if (z <= 0.0) return 0.0;
  if (z < 1.0) return z * z * z / 3.0;
  return z - 2.0 / 3.0;
}

}  // namespace

std::vector<double> forward_values(const ModelParams& model, const Tensor& patches) {
  const ModelArch& arch = model.arch;
  check_patches(arch, patches);
  ensure_finite(patches, "model input");
  // Same kernel and accumulation order as the tape forward.
  Tensor pre = matmul_values(patches, model.hidden, false, true);  // [P x m]
  for (auto& z : pre.values) z = apply_activation(arch.activation, z);
  Tensor pooled = Tensor::zeros({arch.hidden});
  for (std::size_t p = 0; p < arch.patches; ++p)
    for (std::size_t i = 0; i < arch.hidden; ++i)
      pooled.values[i] += pre.values[p * arch.hidden + i];
  Tensor logits = matmul_values(model.head, pooled, false, false);  // [k]
  for (std::size_t j = 0; j < arch.k; ++j) logits.values[j] += model.bias.values[j];
  ensure_finite(logits, "model logits");
  return logits.values;
}

ModelVars declare_params(Graph& g, const ModelParams& model, bool requires_grad) {
  ModelVars vars;
  vars.hidden = g.leaf(model.hidden, requires_grad);
  vars.head = g.leaf(model.head, requires_grad);
  vars.bias = g.leaf(model.bias, requires_grad);
  return vars;
}

Graph::Var forward_graph(Graph& g, const ModelArch& arch, const ModelVars& vars,
                         Graph::Var patches) {
  check_patches(arch, g.value(patches));
  Graph::Var pre = g.matmul(patches, vars.hidden, false, true);
  Graph::Var acts =
      arch.activation == Activation::kRelu ? g.relu(pre) : g.cubic_ramp(pre);
  Graph::Var pooled = g.col_sum(acts);
  return g.add(g.matmul(vars.head, pooled), vars.bias);
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kClean:
      return "clean";
    case Method::kPgdAt:
      return "pgdat";
    case Method::kTrades:
      return "trades";
    case Method::kCktat:
      return "cktat";
    case Method::kCktatNoKlTeacher:
      return "cktat_no_kl_teacher";
    case Method::kCktatNoKlSelf:
      return "cktat_no_kl_self";
  }
  throw ContractError("unknown method");
}

Method method_from_name(const std::string& name) {
  if (name == "clean") return Method::kClean;
  if (name == "pgdat") return Method::kPgdAt;
  if (name == "trades") return Method::kTrades;
  if (name == "cktat") return Method::kCktat;
  if (name == "cktat_no_kl_teacher") return Method::kCktatNoKlTeacher;
  if (name == "cktat_no_kl_self") return Method::kCktatNoKlSelf;
  throw InvalidParameterError("unknown method '" + name + "'");
}

bool method_needs_teacher(Method m) {
  return m == Method::kCktat || m == Method::kCktatNoKlSelf;
}

bool method_is_adversarial(Method m) { return m != Method::kClean; }

void validate(const LossSpec& spec) {
  if (!(spec.tau > 0.0)) throw InvalidParameterError("loss: tau must be positive");
  if (!(spec.beta >= 0.0)) throw InvalidParameterError("loss: beta must be >= 0");
  if (!(spec.prob_floor > 0.0 && spec.prob_floor < 1e-3))
    throw InvalidParameterError("loss: prob_floor must lie in (0, 1e-3)");
}

namespace {

// KL(target || softmax(student_logits)) by default; reversed by
// spec.kl_reverse. Assembled in log space so the student-side gradient keeps
// the (q - p) shape even when the student is confidently wrong.
Graph::Var kl_term(Graph& g, const LossSpec& spec, Graph::Var target_probs,
                   Graph::Var target_log_probs, Graph::Var student_logits) {
  Graph::Var lsm = g.log_softmax(student_logits);
  if (spec.kl_reverse)
    return g.sum(g.mul(g.softmax(student_logits), g.sub(lsm, target_log_probs)));
  return g.sum(g.mul(target_probs, g.sub(target_log_probs, lsm)));
}

// Tempered softmax of a constant logit vector in probability and log space,
// composed exactly like the tape's log_softmax so that a student matching the
// target logits at tau = 1 cancels bitwise. Log-probabilities are floored so
// a saturated teacher tail cannot pull the objective toward -inf mass.
std::pair<Tensor, Tensor> tempered_target(const std::vector<double>& logits,
                                          double tau, double prob_floor) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = logits[i] - m;
    if (tau != 1.0) w[i] *= 1.0 / tau;
  }
  double total = 0.0;
  for (const double v : w) total += std::exp(v);
  const double log_total = std::log(total);
  const double log_floor = std::log(prob_floor);
  Tensor probs = Tensor::vector(w);
  Tensor log_probs = Tensor::vector(w);
  for (std::size_t i = 0; i < w.size(); ++i) {
    log_probs.values[i] = std::max(w[i] - log_total, log_floor);
    probs.values[i] = std::exp(log_probs.values[i]);
  }
  return {probs, log_probs};
}

}  // namespace

Graph::Var loss_graph(Graph& g, const LossSpec& spec, const ModelArch& arch,
                      const ModelVars& vars, const Tensor& clean_patches,
                      const Tensor& adv_patches, std::uint32_t label,
                      const ModelParams* teacher) {
  validate(spec);
  if (label >= arch.k) throw IndexError("loss: label out of range");
  if (method_needs_teacher(spec.method) && teacher == nullptr)
    throw ConfigError("loss: method " + method_name(spec.method) + " requires a teacher");

  switch (spec.method) {
    case Method::kClean: {
      Graph::Var logits = forward_graph(g, arch, vars, g.constant(clean_patches));
      return g.cross_entropy(logits, label);
    }
    case Method::kPgdAt: {
      Graph::Var logits = forward_graph(g, arch, vars, g.constant(adv_patches));
      return g.cross_entropy(logits, label);
    }
    case Method::kTrades: {
      Graph::Var clean_logits = forward_graph(g, arch, vars, g.constant(clean_patches));
      Graph::Var adv_logits = forward_graph(g, arch, vars, g.constant(adv_patches));
      Graph::Var ce = g.cross_entropy(clean_logits, label);
      Graph::Var clean_probs = g.softmax(clean_logits);
      Graph::Var clean_lsm = g.log_softmax(clean_logits);
      if (spec.stop_grad_clean) {
        clean_probs = g.constant(g.value(clean_probs));
        clean_lsm = g.constant(g.value(clean_lsm));
      }
      Graph::Var self_kl = kl_term(g, spec, clean_probs, clean_lsm, adv_logits);
      return g.add(ce, g.scale(self_kl, spec.beta));
    }
    case Method::kCktat:
    case Method::kCktatNoKlSelf: {
      const auto [t_probs, t_log_probs] = tempered_target(
          forward_values(*teacher, clean_patches), spec.tau, spec.prob_floor);
      Graph::Var adv_logits = forward_graph(g, arch, vars, g.constant(adv_patches));
      Graph::Var distill = kl_term(g, spec, g.constant(t_probs),
                                   g.constant(t_log_probs), adv_logits);
      if (spec.method == Method::kCktatNoKlSelf) return distill;
      Graph::Var clean_logits = forward_graph(g, arch, vars, g.constant(clean_patches));
      Graph::Var clean_probs = g.softmax(clean_logits);
      Graph::Var clean_lsm = g.log_softmax(clean_logits);
      if (spec.stop_grad_clean) {
        clean_probs = g.constant(g.value(clean_probs));
        clean_lsm = g.constant(g.value(clean_lsm));
      }
      // The adversarial branch appears in both terms; reuse the one forward.
      Graph::Var self_kl = kl_term(g, spec, clean_probs, clean_lsm, adv_logits);
      return g.add(distill, g.scale(self_kl, spec.beta));
    }
    case Method::kCktatNoKlTeacher: {
      Graph::Var adv_logits = forward_graph(g, arch, vars, g.constant(adv_patches));
      Graph::Var ce = g.cross_entropy(adv_logits, label);
      Graph::Var clean_logits = forward_graph(g, arch, vars, g.constant(clean_patches));
      Graph::Var clean_probs = g.softmax(clean_logits);
      Graph::Var clean_lsm = g.log_softmax(clean_logits);
      if (spec.stop_grad_clean) {
        clean_probs = g.constant(g.value(clean_probs));
        clean_lsm = g.constant(g.value(clean_lsm));
      }
      Graph::Var self_kl = kl_term(g, spec, clean_probs, clean_lsm, adv_logits);
      return g.add(ce, g.scale(self_kl, spec.beta));
    }
  }
  throw ContractError("unknown method");
}

}  // namespace mvlab
