#include "mvlab/graph.hpp"

#include <algorithm>
#include <cmath>

#include "mvlab/errors.hpp"

namespace mvlab {

namespace {

double kl_core(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size())
    throw ContractError("kl_divergence: length mismatch");
  if (p.empty()) throw ContractError("kl_divergence: empty distributions");
  double sp = 0.0, sq = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!(p[j] >= 0.0 && p[j] <= 1.0) || !(q[j] >= 0.0 && q[j] <= 1.0))
      throw InvalidInputError("kl_divergence: entries must lie in [0,1]");
    sp += p[j];
    sq += q[j];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
    throw InvalidInputError("kl_divergence: distributions must sum to 1 within 1e-9");
  double out = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) {
      if (q[j] == 0.0)
        throw DivergenceUndefinedError("kl_divergence: q has zero mass where p does not");
      out += p[j] * std::log(p[j] / q[j]);
    }
  }
  return out;
}

}  // namespace

Graph::Var Graph::push(Node node) {
  ensure_finite(node.value, "graph op output");
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw IndexError("graph: unknown node id");
  return nodes_[v.id];
}

void Graph::check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b) && b.numel() != 1)
    throw ContractError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                        b.shape_str());
}

Graph::Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

Graph::Var Graph::constant(Tensor value) { return leaf(std::move(value), false); }

Graph::Var Graph::add(Var a, Var b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  check_same_shape(av, bv, "add");
  Node n;
  n.op = Op::kAdd;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.a = a.id;
  n.b = b.id;
  n.value = av;
  if (bv.numel() == 1) {
    for (auto& x : n.value.values) x += bv.values[0];
  } else {
    for (std::size_t i = 0; i < n.value.values.size(); ++i) n.value.values[i] += bv.values[i];
  }
  return push(std::move(n));
}

Graph::Var Graph::sub(Var a, Var b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  check_same_shape(av, bv, "sub");
  Node n;
  n.op = Op::kSub;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.a = a.id;
  n.b = b.id;
  n.value = av;
  if (bv.numel() == 1) {
    for (auto& x : n.value.values) x -= bv.values[0];
  } else {
    for (std::size_t i = 0; i < n.value.values.size(); ++i) n.value.values[i] -= bv.values[i];
  }
  return push(std::move(n));
}

Graph::Var Graph::mul(Var a, Var b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  check_same_shape(av, bv, "mul");
  Node n;
  n.op = Op::kMul;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.a = a.id;
  n.b = b.id;
  n.value = av;
  if (bv.numel() == 1) {
    for (auto& x : n.value.values) x *= bv.values[0];
  } else {
    for (std::size_t i = 0; i < n.value.values.size(); ++i) n.value.values[i] *= bv.values[i];
  }
  return push(std::move(n));
}

Graph::Var Graph::div(Var a, Var b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  check_same_shape(av, bv, "div");
  Node n;
  n.op = Op::kDiv;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.a = a.id;
  n.b = b.id;
  n.value = av;
  if (bv.numel() == 1) {
    for (auto& x : n.value.values) x /= bv.values[0];
  } else {
    for (std::size_t i = 0; i < n.value.values.size(); ++i) n.value.values[i] /= bv.values[i];
  }
  return push(std::move(n));
}

Graph::Var Graph::neg(Var a) { return scale(a, -1.0); }

Graph::Var Graph::scale(Var a, double k) {
  Node n;
  n.op = Op::kScale;
  n.requires_grad = node(a).requires_grad;
  n.a = a.id;
  n.k = k;
  n.value = node(a).value;
  for (auto& x : n.value.values) x *= k;
  return push(std::move(n));
}

Graph::Var Graph::add_scalar(Var a, double k) {
  Node n;
  n.op = Op::kAddScalar;
  n.requires_grad = node(a).requires_grad;
  n.a = a.id;
  n.k = k;
  n.value = node(a).value;
  for (auto& x : n.value.values) x += k;
  return push(std::move(n));
}

Graph::Var Graph::exp(Var a) {
  Node n;
  n.op = Op::kExp;
  n.requires_grad = node(a).requires_grad;
  n.a = a.id;
  n.value = node(a).value;
  for (auto& x : n.value.values) x = std::exp(x);
  return push(std::move(n));
}

Graph::Var Graph::log(Var a) {
  Node n;
  n.op = Op::kLog;
  n.requires_grad = node(a).requires_grad;
  n.a = a.id;
  n.value = node(a).value;
  for (auto& x : n.value.values) x = std::log(x);
  return push(std::move(n));
}

Graph::Var Graph::relu(Var a) {
  Node n;
  n.op = Op::kRelu;
  n.requires_grad = node(a).requires_grad;
  n.a = a.id;
  n.value = node(a).value;
  for (auto& x : n.value.values) x = x > 0.0 ? x : 0.0;
  return push(std::move(n));
}

Graph::Var Graph::cubic_ramp(Var a) {
  Node n;
  n.op = Op::kCubicRamp;
  n.requires_grad = node(a).requires_grad;
  n.a = a.id;
  n.value = node(a).value;
  for (auto& x : n.value.values) {
    if (x <= 0.0)
      x = 0.0;
    else if (x < 1.0)
      x = x * x * x / 3.0;
    else
      x = x - 2.0 / 3.0;
  }
  return push(std::move(n));
}

Graph::Var Graph::clamp_min(Var a, double floor) {
  Node n;
  n.op = Op::kClampMin;
  n.requires_grad = node(a).requires_grad;
  n.a = a.id;
  n.k = floor;
  n.value = node(a).value;
  for (auto& x : n.value.values) x = x < floor ? floor : x;
  return push(std::move(n));
}

Graph::Var Graph::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  Node n;
  n.op = Op::kMatmul;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.a = a.id;
  n.b = b.id;
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  n.value = matmul_values(node(a).value, node(b).value, trans_a, trans_b);
  return push(std::move(n));
}

Graph::Var Graph::col_sum(Var a) {
  const Tensor& av = node(a).value;
  if (av.rank() != 2) throw ContractError("col_sum: rank-2 operand required");
  Node n;
  n.op = Op::kColSum;
  n.requires_grad = node(a).requires_grad;
  n.a = a.id;
  n.value = Tensor::zeros({av.cols()});
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) n.value.values[c] += av.at(r, c);
  return push(std::move(n));
}

Graph::Var Graph::sum(Var a) {
  Node n;
  n.op = Op::kSum;
  n.requires_grad = node(a).requires_grad;
  n.a = a.id;
  double total = 0.0;
  for (double x : node(a).value.values) total += x;
  n.value = Tensor::scalar(total);
  return push(std::move(n));
}

Graph::Var Graph::pick(Var a, std::size_t index) {
  const Tensor& av = node(a).value;
  if (av.rank() != 1) throw ContractError("pick: rank-1 operand required");
  if (index >= av.numel()) throw IndexError("pick: index out of range");
  Node n;
  n.op = Op::kPick;
  n.requires_grad = node(a).requires_grad;
  n.a = a.id;
  n.index = index;
  n.value = Tensor::scalar(av.values[index]);
  return push(std::move(n));
}

Graph::Var Graph::kl_divergence(Var p, Var q) {
  const Tensor& pv = node(p).value;
  const Tensor& qv = node(q).value;
  if (pv.rank() != 1 || qv.rank() != 1)
    throw ContractError("kl_divergence: rank-1 operands required");
  Node n;
  n.op = Op::kKl;
  n.requires_grad = node(p).requires_grad || node(q).requires_grad;
  n.a = p.id;
  n.b = q.id;
  n.value = Tensor::scalar(kl_core(pv.values, qv.values));
  return push(std::move(n));
}

Graph::Var Graph::softmax(Var logits, double tau) {
  if (!(tau > 0.0)) throw InvalidParameterError("softmax: tau must be positive");
  const Tensor& lv = node(logits).value;
  if (lv.rank() != 1 || lv.numel() == 0)
    throw ContractError("softmax: nonempty rank-1 operand required");
  const double m = *std::max_element(lv.values.begin(), lv.values.end());
  Var z = add_scalar(logits, -m);
  if (tau != 1.0) z = scale(z, 1.0 / tau);
  Var e = exp(z);
  return div(e, sum(e));
}

Graph::Var Graph::log_softmax(Var logits) {
  const Tensor& lv = node(logits).value;
  if (lv.rank() != 1 || lv.numel() == 0)
    throw ContractError("log_softmax: nonempty rank-1 operand required");
  const double m = *std::max_element(lv.values.begin(), lv.values.end());
  Var z = add_scalar(logits, -m);
  return sub(z, log(sum(exp(z))));
}

Graph::Var Graph::cross_entropy(Var logits, std::size_t label) {
  const Tensor& lv = node(logits).value;
  if (lv.rank() != 1) throw ContractError("cross_entropy: rank-1 logits required");
  if (label >= lv.numel()) throw IndexError("cross_entropy: label out of range");
  return neg(pick(log_softmax(logits), label));
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.adjoint.values.empty()) {
    Tensor z = n.value;
    std::fill(z.values.begin(), z.values.end(), 0.0);
    return z;
  }
  return n.adjoint;
}

namespace {

// dst += src, where src may need to be reduced to a scalar (broadcast case).
void accumulate(Tensor& dst, const Tensor& like, const std::vector<double>& contrib) {
  if (dst.values.empty()) {
    dst = like;
    std::fill(dst.values.begin(), dst.values.end(), 0.0);
  }
  if (dst.numel() == contrib.size()) {
    for (std::size_t i = 0; i < contrib.size(); ++i) dst.values[i] += contrib[i];
  } else if (dst.numel() == 1) {
    double total = 0.0;
    for (double x : contrib) total += x;
    dst.values[0] += total;
  } else {
    throw ContractError("graph backward: adjoint shape mismatch");
  }
}

Tensor outer_product(const std::vector<double>& u, const std::vector<double>& v) {
  Tensor out = Tensor::matrix(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) out.values[i * v.size() + j] = u[i] * v[j];
  return out;
}

}  // namespace

void Graph::backward(Var output) {
  Node& out = nodes_.at(output.id);
  if (out.value.numel() != 1)
    throw ContractError("backward: output must be a scalar");
  for (Node& n : nodes_) {
    n.adjoint.shape.clear();
    n.adjoint.values.clear();
  }
  if (!out.requires_grad) return;
  out.adjoint = Tensor::scalar(1.0);

  for (std::uint32_t idx = output.id + 1; idx-- > 0;) {
    Node& n = nodes_[idx];
    if (n.adjoint.values.empty() || !n.requires_grad) continue;
    const std::vector<double>& g = n.adjoint.values;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        if (na.requires_grad) accumulate(na.adjoint, na.value, g);
        if (nb.requires_grad) accumulate(nb.adjoint, nb.value, g);
        break;
      }
      case Op::kSub: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        if (na.requires_grad) accumulate(na.adjoint, na.value, g);
        if (nb.requires_grad) {
          std::vector<double> neg_g(g.size());
          for (std::size_t i = 0; i < g.size(); ++i) neg_g[i] = -g[i];
          accumulate(nb.adjoint, nb.value, neg_g);
        }
        break;
      }
      case Op::kMul: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        const bool bcast = nb.value.numel() == 1 && na.value.numel() != 1;
        if (na.requires_grad) {
          std::vector<double> da(g.size());
          for (std::size_t i = 0; i < g.size(); ++i)
            da[i] = g[i] * (bcast ? nb.value.values[0] : nb.value.values[i]);
          accumulate(na.adjoint, na.value, da);
        }
        if (nb.requires_grad) {
          std::vector<double> db(g.size());
          for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * na.value.values[i];
          accumulate(nb.adjoint, nb.value, db);
        }
        break;
      }
      case Op::kDiv: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        const bool bcast = nb.value.numel() == 1 && na.value.numel() != 1;
        if (na.requires_grad) {
          std::vector<double> da(g.size());
          for (std::size_t i = 0; i < g.size(); ++i)
            da[i] = g[i] / (bcast ? nb.value.values[0] : nb.value.values[i]);
          accumulate(na.adjoint, na.value, da);
        }
        if (nb.requires_grad) {
          std::vector<double> db(g.size());
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double bi = bcast ? nb.value.values[0] : nb.value.values[i];
            db[i] = -g[i] * n.value.values[i] / bi;
          }
          accumulate(nb.adjoint, nb.value, db);
        }
        break;
      }
      case Op::kScale: {
        Node& na = nodes_[n.a];
        std::vector<double> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * n.k;
        accumulate(na.adjoint, na.value, da);
        break;
      }
      case Op::kAddScalar: {
        Node& na = nodes_[n.a];
        accumulate(na.adjoint, na.value, g);
        break;
      }
      case Op::kExp: {
        Node& na = nodes_[n.a];
        std::vector<double> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * n.value.values[i];
        accumulate(na.adjoint, na.value, da);
        break;
      }
      case Op::kLog: {
        Node& na = nodes_[n.a];
        std::vector<double> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] / na.value.values[i];
        accumulate(na.adjoint, na.value, da);
        break;
      }
      case Op::kRelu: {
        Node& na = nodes_[n.a];
        std::vector<double> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i)
          da[i] = na.value.values[i] > 0.0 ? g[i] : 0.0;
        accumulate(na.adjoint, na.value, da);
        break;
      }
      case Op::kCubicRamp: {
        Node& na = nodes_[n.a];
        std::vector<double> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double z = na.value.values[i];
          double slope = 0.0;
          if (z >= 1.0)
            slope = 1.0;
          else if (z > 0.0)
            slope = z * z;
          da[i] = g[i] * slope;
        }
        accumulate(na.adjoint, na.value, da);
        break;
      }
      case Op::kClampMin: {
        Node& na = nodes_[n.a];
        std::vector<double> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i)
          da[i] = na.value.values[i] >= n.k ? g[i] : 0.0;
        accumulate(na.adjoint, na.value, da);
        break;
      }
      case Op::kMatmul: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        const Tensor& av = na.value;
        const Tensor& bv = nb.value;
        if (bv.rank() == 1) {
          if (na.requires_grad) {
            Tensor da = n.trans_a ? outer_product(bv.values, g) : outer_product(g, bv.values);
            accumulate(na.adjoint, av, da.values);
          }
          if (nb.requires_grad) {
            Tensor gv = Tensor::vector(g);
            Tensor db = matmul_values(av, gv, !n.trans_a, false);
            accumulate(nb.adjoint, bv, db.values);
          }
        } else {
          const Tensor& gv = n.adjoint;
          if (na.requires_grad) {
            Tensor da;
            if (!n.trans_a && !n.trans_b)
              da = matmul_values(gv, bv, false, true);
            else if (!n.trans_a && n.trans_b)
              da = matmul_values(gv, bv, false, false);
            else if (n.trans_a && !n.trans_b)
              da = matmul_values(bv, gv, false, true);
            else
              da = matmul_values(bv, gv, true, true);
            accumulate(na.adjoint, av, da.values);
          }
          if (nb.requires_grad) {
            Tensor db;
            if (!n.trans_a && !n.trans_b)
              db = matmul_values(av, gv, true, false);
            else if (!n.trans_a && n.trans_b)
              db = matmul_values(gv, av, true, false);
            else if (n.trans_a && !n.trans_b)
              db = matmul_values(av, gv, false, false);
            else
              db = matmul_values(gv, av, true, true);
            accumulate(nb.adjoint, bv, db.values);
          }
        }
        break;
      }
      case Op::kColSum: {
        Node& na = nodes_[n.a];
        const std::size_t rows = na.value.rows();
        const std::size_t cols = na.value.cols();
        std::vector<double> da(rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) da[r * cols + c] = g[c];
        accumulate(na.adjoint, na.value, da);
        break;
      }
      case Op::kSum: {
        Node& na = nodes_[n.a];
        std::vector<double> da(na.value.numel(), g[0]);
        accumulate(na.adjoint, na.value, da);
        break;
      }
      case Op::kPick: {
        Node& na = nodes_[n.a];
        std::vector<double> da(na.value.numel(), 0.0);
        da[n.index] = g[0];
        accumulate(na.adjoint, na.value, da);
        break;
      }
      case Op::kKl: {
        Node& np = nodes_[n.a];
        Node& nq = nodes_[n.b];
        const std::vector<double>& p = np.value.values;
        const std::vector<double>& q = nq.value.values;
        if (np.requires_grad) {
          std::vector<double> dp(p.size(), 0.0);
          for (std::size_t j = 0; j < p.size(); ++j)
            if (p[j] > 0.0) dp[j] = g[0] * (std::log(p[j] / q[j]) + 1.0);
          accumulate(np.adjoint, np.value, dp);
        }
        if (nq.requires_grad) {
          std::vector<double> dq(q.size(), 0.0);
          for (std::size_t j = 0; j < q.size(); ++j)
            if (p[j] > 0.0) dq[j] = -g[0] * p[j] / q[j];
          accumulate(nq.adjoint, nq.value, dq);
        }
        break;
      }
    }
  }
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at,
                        double h) {
  if (!(h > 0.0)) throw InvalidParameterError("finite_diff_grad: h must be positive");
  Tensor grad = at;
  Tensor probe = at;
  for (std::size_t i = 0; i < at.numel(); ++i) {
    const double x0 = at.values[i];
    probe.values[i] = x0 + h;
    const double fp = f(probe);
    probe.values[i] = x0 - h;
    const double fm = f(probe);
    probe.values[i] = x0;
    grad.values[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

std::vector<double> softmax_values(const std::vector<double>& logits, double tau) {
  if (!(tau > 0.0)) throw InvalidParameterError("softmax: tau must be positive");
  if (logits.empty()) throw ContractError("softmax: empty logits");
  ensure_finite(logits, "softmax logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double z = logits[i] - m;
    if (tau != 1.0) z *= 1.0 / tau;
    out[i] = std::exp(z);
    total += out[i];
  }
  for (auto& x : out) x /= total;
  return out;
}

double kl_divergence_values(const std::vector<double>& p, const std::vector<double>& q) {
  return kl_core(p, q);
}

double cross_entropy_values(const std::vector<double>& logits, std::size_t label) {
  if (logits.empty()) throw ContractError("cross_entropy: empty logits");
  if (label >= logits.size()) throw IndexError("cross_entropy: label out of range");
  ensure_finite(logits, "cross_entropy logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - m);
  return std::log(total) - (logits[label] - m);
}

}  // namespace mvlab
