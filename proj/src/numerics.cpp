#include "ofscil/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ofscil {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NoForwardRecorded: return "NoForwardRecorded";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::SizeNotMultipleOfRecord: return "SizeNotMultipleOfRecord";
    case ErrorCode::EmptyMemory: return "EmptyMemory";
    case ErrorCode::OverflowAfterShift: return "OverflowAfterShift";
    case ErrorCode::DuplicateClass: return "DuplicateClass";
    case ErrorCode::EmptySampleSet: return "EmptySampleSet";
    case ErrorCode::MisalignedMemories: return "MisalignedMemories";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::InsufficientClasses: return "InsufficientClasses";
    case ErrorCode::ConflictingFlags: return "ConflictingFlags";
    case ErrorCode::NumericFailure: return "NumericFailure";
  }
  return "Unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::ShapeMismatch, "matrix data length " + std::to_string(data_.size()) +
                                              " != " + std::to_string(rows_) + "x" +
                                              std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw Error(ErrorCode::ShapeMismatch, "ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "dot of " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cossim(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na < kZeroNormThreshold || nb < kZeroNormThreshold) {
    throw Error(ErrorCode::ZeroNorm, "cossim of a zero-norm vector");
  }
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

Vector cossim_grad(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na < kZeroNormThreshold || nb < kZeroNormThreshold) {
    throw Error(ErrorCode::ZeroNorm, "cossim of a zero-norm vector");
  }
  const double c = dot(a, b) / (na * nb);
  Vector g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = b[i] / (na * nb) - c * a[i] / (na * na);
  return g;
}

Vector relu(std::span<const double> x) {
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "matmul " + std::to_string(a.rows()) + "x" +
                                              std::to_string(a.cols()) + " by " +
                                              std::to_string(b.rows()) + "x" +
                                              std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Vector affine(const Matrix& w, std::span<const double> x, std::span<const double> b) {
  if (w.cols() != x.size() || w.rows() != b.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "affine: weight " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                    ", input " + std::to_string(x.size()) + ", bias " + std::to_string(b.size()));
  }
  Vector y(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = 0.0;
    const auto wr = w.row(r);
    for (std::size_t k = 0; k < x.size(); ++k) s += wr[k] * x[k];
    y[r] = s + b[r];
  }
  return y;
}

Vector softmax(std::span<const double> logits) {
  Vector p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

LossAndGrad softmax_ce(std::span<const double> logits, std::span<const double> target) {
  if (logits.size() != target.size() || logits.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "softmax_ce: logits and target differ in size");
  }
  const auto top = static_cast<std::size_t>(
      std::max_element(logits.begin(), logits.end()) - logits.begin());
  const double mx = logits[top];
  // log-sum-exp as mx + log1p(sum of the non-max terms) keeps tiny losses accurate.
  double rest = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (i != top) rest += std::exp(logits[i] - mx);
  const double log_rest = std::log1p(rest);

  LossAndGrad out;
  out.grad.resize(logits.size());
  double tsum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double log_p = (logits[i] - mx) - log_rest;
    if (target[i] != 0.0) out.loss -= target[i] * log_p;
    tsum += target[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.grad[i] = tsum * std::exp((logits[i] - mx) - log_rest) - target[i];
  }
  return out;
}

LossAndGrad softmax_ce(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw Error(ErrorCode::InvalidArgument, "softmax_ce: target " + std::to_string(target) +
                                                " out of range " + std::to_string(logits.size()));
  }
  return softmax_ce(logits, one_hot(target, logits.size()));
}

Vector one_hot(std::size_t index, std::size_t dim) {
  Vector v(dim, 0.0);
  if (index < dim) v[index] = 1.0;
  return v;
}

std::size_t argmax(std::span<const double> x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace ofscil
