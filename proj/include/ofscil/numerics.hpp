#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ofscil/error.hpp"

namespace ofscil {

using Vector = std::vector<double>;

// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline constexpr double kZeroNormThreshold = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

// Throws ZeroNorm when either norm is below kZeroNormThreshold.
double cossim(std::span<const double> a, std::span<const double> b);

// Gradient of cossim(a, b) with respect to a.
Vector cossim_grad(std::span<const double> a, std::span<const double> b);

Vector relu(std::span<const double> x);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// y = W x + b
Vector affine(const Matrix& w, std::span<const double> x, std::span<const double> b);

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};

// Cross-entropy against a class index.
LossAndGrad softmax_ce(std::span<const double> logits, std::size_t target);
// Cross-entropy against a probability vector (mixed labels).
LossAndGrad softmax_ce(std::span<const double> logits, std::span<const double> target);

Vector softmax(std::span<const double> logits);
Vector one_hot(std::size_t index, std::size_t dim);
std::size_t argmax(std::span<const double> x);

bool all_finite(std::span<const double> x);

}  // namespace ofscil
