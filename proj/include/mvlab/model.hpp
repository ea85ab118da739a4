#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvlab/graph.hpp"
#include "mvlab/tensor.hpp"

namespace mvlab {

enum class Activation : std::uint8_t { kRelu = 0, kCubicRamp = 1 };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Patch-shared single-hidden-layer network: each hidden unit applies the
// same weight row to every patch, activations are summed over patches, and
// a linear head maps the pooled vector to class logits.
struct ModelArch {
  std::size_t k = 5;        // classes
  std::size_t d = 30;       // patch dimension
  std::size_t patches = 25; // P
  std::size_t hidden = 40;  // m
  Activation activation = Activation::kRelu;
};

void validate(const ModelArch& arch);

struct ModelParams {
  ModelArch arch;
  Tensor hidden;  // [m x d]
  Tensor head;    // [k x m]
  Tensor bias;    // [k]

  std::size_t parameter_count() const;
};

// Gaussian init scaled by sqrt(2/fan_in) for hidden and head; zero bias.
ModelParams init_model(const ModelArch& arch, std::uint64_t seed);

// Logits for one sample without building a tape. Bitwise identical to the
// tape forward.
std::vector<double> forward_values(const ModelParams& model, const Tensor& patches);

struct ModelVars {
  Graph::Var hidden;
  Graph::Var head;
  Graph::Var bias;
};

ModelVars declare_params(Graph& g, const ModelParams& model, bool requires_grad);

// patches must be a [P x d] node in the same graph.
Graph::Var forward_graph(Graph& g, const ModelArch& arch, const ModelVars& vars,
                         Graph::Var patches);

enum class Method : std::uint8_t {
  kClean = 0,
  kPgdAt = 1,
  kTrades = 2,
  kCktat = 3,
  kCktatNoKlTeacher = 4,
  kCktatNoKlSelf = 5,
};

std::string method_name(Method m);
Method method_from_name(const std::string& name);
bool method_needs_teacher(Method m);
bool method_is_adversarial(Method m);

// Composite training objective. The teacher branch is distilled at
// temperature tau; the self-consistency KL compares clean and adversarial
// student outputs at temperature 1. KL arguments are (target, student)
// unless kl_reverse; constant target log-probabilities are floored at
// log(prob_floor) so a saturated target tail cannot produce infinities.
// stop_grad_clean freezes the clean branch inside the self-consistency
// term, turning it into a one-way pull toward the clean prediction.
struct LossSpec {
  Method method = Method::kCktat;
  double beta = 6.0;
  double tau = 5.0;
  bool kl_reverse = false;
  bool stop_grad_clean = false;
  double prob_floor = 1e-12;
};

void validate(const LossSpec& spec);

// Per-sample loss node. clean/adv patches enter as constants; gradients
// flow to the parameter vars (and, through them, to whatever the caller
// declared). The teacher is evaluated outside the tape: no gradient ever
// reaches it. Methods without a teacher pass nullptr.
Graph::Var loss_graph(Graph& g, const LossSpec& spec, const ModelArch& arch,
                      const ModelVars& vars, const Tensor& clean_patches,
                      const Tensor& adv_patches, std::uint32_t label,
                      const ModelParams* teacher);

}  // namespace mvlab
