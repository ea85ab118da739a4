#include "mvlab/tensor.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "mvlab/errors.hpp"

namespace mvlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMat>;
using MapMatMut = Eigen::Map<RowMat>;

}  // namespace

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.values = {v};
  return t;
}

Tensor Tensor::vector(std::vector<double> v) {
  Tensor t;
  t.shape = {v.size()};
  t.values = std::move(v);
  return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols) {
  Tensor t;
  t.shape = {rows, cols};
  t.values.assign(rows * cols, 0.0);
  return t;
}

Tensor Tensor::zeros(const std::vector<std::size_t>& shape) {
  Tensor t;
  t.shape = shape;
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  t.values.assign(n, 0.0);
  return t;
}

Tensor Tensor::full(const std::vector<std::size_t>& shape, double v) {
  Tensor t = zeros(shape);
  for (auto& x : t.values) x = v;
  return t;
}

std::size_t Tensor::numel() const { return values.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ContractError("rows() on tensor of rank " + std::to_string(rank()));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ContractError("cols() on tensor of rank " + std::to_string(rank()));
  return shape[1];
}

double& Tensor::at(std::size_t i) {
  if (i >= values.size()) throw IndexError("tensor index out of range");
  return values[i];
}

double Tensor::at(std::size_t i) const {
  if (i >= values.size()) throw IndexError("tensor index out of range");
  return values[i];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  if (rank() != 2 || r >= shape[0] || c >= shape[1])
    throw IndexError("tensor index out of range");
  return values[r * shape[1] + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2 || r >= shape[0] || c >= shape[1])
    throw IndexError("tensor index out of range");
  return values[r * shape[1] + c];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

void ensure_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidInputError(std::string(what) + ": non-finite value");
  }
}

void ensure_finite(const Tensor& t, const char* what) { ensure_finite(t.values, what); }

Tensor matmul_values(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() == 2 && b.rank() == 2) {
    MapMat am(a.values.data(), static_cast<Eigen::Index>(a.shape[0]),
              static_cast<Eigen::Index>(a.shape[1]));
    MapMat bm(b.values.data(), static_cast<Eigen::Index>(b.shape[0]),
              static_cast<Eigen::Index>(b.shape[1]));
    const Eigen::Index ar = trans_a ? am.cols() : am.rows();
    const Eigen::Index ac = trans_a ? am.rows() : am.cols();
    const Eigen::Index br = trans_b ? bm.cols() : bm.rows();
    const Eigen::Index bc = trans_b ? bm.rows() : bm.cols();
    if (ac != br)
      throw ContractError("matmul: inner dimensions disagree, " + a.shape_str() + " vs " +
                          b.shape_str());
    Tensor out = Tensor::matrix(static_cast<std::size_t>(ar), static_cast<std::size_t>(bc));
    MapMatMut om(out.values.data(), ar, bc);
    if (!trans_a && !trans_b)
      om.noalias() = am * bm;
    else if (!trans_a && trans_b)
      om.noalias() = am * bm.transpose();
    else if (trans_a && !trans_b)
      om.noalias() = am.transpose() * bm;
    else
      om.noalias() = am.transpose() * bm.transpose();
    return out;
  }
  if (a.rank() == 2 && b.rank() == 1) {
    if (trans_b) throw ContractError("matmul: cannot transpose a rank-1 operand");
    MapMat am(a.values.data(), static_cast<Eigen::Index>(a.shape[0]),
              static_cast<Eigen::Index>(a.shape[1]));
    Eigen::Map<const Eigen::VectorXd> bv(b.values.data(),
                                         static_cast<Eigen::Index>(b.shape[0]));
    const Eigen::Index rows = trans_a ? am.cols() : am.rows();
    const Eigen::Index inner = trans_a ? am.rows() : am.cols();
    if (inner != bv.size())
      throw ContractError("matmul: inner dimensions disagree, " + a.shape_str() + " vs " +
                          b.shape_str());
    Tensor out = Tensor::zeros({static_cast<std::size_t>(rows)});
    Eigen::Map<Eigen::VectorXd> ov(out.values.data(), rows);
    if (trans_a)
      ov.noalias() = am.transpose() * bv;
    else
      ov.noalias() = am * bv;
    return out;
  }
  throw ContractError("matmul: unsupported ranks " + std::to_string(a.rank()) + " and " +
                      std::to_string(b.rank()));
}

}  // namespace mvlab
