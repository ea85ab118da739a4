#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mvlab {

// Dense row-major tensor of doubles. Rank 0 (scalar), 1, or 2 in practice.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols);
  static Tensor zeros(const std::vector<std::size_t>& shape);
  static Tensor full(const std::vector<std::size_t>& shape, double v);

  std::size_t numel() const;
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i);
  double at(std::size_t i) const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;
};

// Throws InvalidInputError if any entry is NaN or infinite.
void ensure_finite(const Tensor& t, const char* what);
void ensure_finite(const std::vector<double>& v, const char* what);

// C = op(A) * op(B) with optional transposes; shapes must be compatible.
// Rank-1 operands are treated as column vectors on the right, and the
// result of a matrix-vector product is rank-1.
Tensor matmul_values(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b);

}  // namespace mvlab
