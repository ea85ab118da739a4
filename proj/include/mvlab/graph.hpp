#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mvlab/tensor.hpp"

namespace mvlab {

// Reverse-mode tape. Operations evaluate eagerly and record a node; the
// recording order is a topological order by construction, so backward() is a
// single reverse sweep that touches each node exactly once.
class Graph {
 public:
  struct Var {
    std::uint32_t id = 0;
  };

  // Leaves. Gradients are accumulated only into nodes reachable from leaves
  // created with requires_grad=true.
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value);

  // Elementwise; operands must share a shape.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double k);
  Var add_scalar(Var a, double k);
  Var exp(Var a);
  Var log(Var a);
  Var relu(Var a);
  // Smoothed ramp: z^3/3 on (0,1), z-2/3 for z>=1, 0 for z<=0. C1 everywhere.
  Var cubic_ramp(Var a);
  Var clamp_min(Var a, double floor);

  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  // [R x C] -> [C], summing over rows.
  Var col_sum(Var a);
  // Any shape -> scalar.
  Var sum(Var a);
  // Rank-1 -> scalar, selecting one entry.
  Var pick(Var a, std::size_t index);

  // KL(p || q) with the 0*ln(0) = 0 convention, as a scalar node.
  // Requires p, q rank-1 of equal length, entries in [0,1] summing to 1
  // within 1e-9. q_j = 0 where p_j > 0 raises DivergenceUndefinedError.
  Var kl_divergence(Var p, Var q);

  // Composites built from the primitives above.
  // softmax(logits / tau) with max-subtraction; tau <= 0 raises.
  Var softmax(Var logits, double tau = 1.0);
  Var log_softmax(Var logits);
  // -log softmax(logits)[label].
  Var cross_entropy(Var logits, std::size_t label);

  const Tensor& value(Var v) const;

  // Reverse sweep from a scalar output. Resets previous adjoints.
  void backward(Var output);

  // Adjoint of a node after backward(); zeros if the node was not reached.
  Tensor grad(Var v) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kNeg,
    kScale,
    kAddScalar,
    kExp,
    kLog,
    kRelu,
    kCubicRamp,
    kClampMin,
    kMatmul,
    kColSum,
    kSum,
    kPick,
    kKl,
  };

  struct Node {
    Op op;
    bool requires_grad;
    bool trans_a = false;
    bool trans_b = false;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    double k = 0.0;
    std::size_t index = 0;
    Tensor value;
    Tensor adjoint;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  static void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

  std::vector<Node> nodes_;
};

// Central-difference gradient of an arbitrary scalar function, the oracle
// the tape is tested against. Evaluates f twice per coordinate; independent
// of the tape machinery by construction.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at,
                        double h = 1e-5);

// Value-level helpers shared by the tape, the evaluators, and the bindings.
std::vector<double> softmax_values(const std::vector<double>& logits, double tau = 1.0);
double kl_divergence_values(const std::vector<double>& p, const std::vector<double>& q);
double cross_entropy_values(const std::vector<double>& logits, std::size_t label);

}  // namespace mvlab
