#include "ofscil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ofscil {

void PretrainLossConfig::validate() const {
  if (!(lambda_ortho >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda_ortho must be >= 0");
  if (!(mix_probability >= 0.0 && mix_probability <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "mix_probability must lie in [0, 1]");
  }
  if (!(mixup_share >= 0.0 && mixup_share <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "mixup_share must lie in [0, 1]");
  }
  if (!(mix_alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "mix_alpha must be > 0");
  if (!(margin > 0.0)) throw Error(ErrorCode::InvalidArgument, "margin must be > 0");
}

MatrixLossAndGrad ortho_loss(const Matrix& theta_pb) {
  const std::size_t b = theta_pb.rows();
  const std::size_t d = theta_pb.cols();
  if (b < 2) throw Error(ErrorCode::ShapeMismatch, "ortho_loss needs at least two rows");

  Matrix unit(b, d);
  Vector norms(b);
  for (std::size_t i = 0; i < b; ++i) {
    norms[i] = norm(theta_pb.row(i));
    if (norms[i] < kZeroNormThreshold) {
      throw Error(ErrorCode::ZeroNorm, "row " + std::to_string(i) + " of the feature batch");
    }
    for (std::size_t k = 0; k < d; ++k) unit(i, k) = theta_pb(i, k) / norms[i];
  }

  // residual = G - I
  Matrix residual = matmul(unit, transpose(unit));
  MatrixLossAndGrad out;
  for (std::size_t i = 0; i < b; ++i) {
    residual(i, i) -= 1.0;
    for (std::size_t j = 0; j < b; ++j) out.loss += residual(i, j) * residual(i, j);
  }

  // dL/dU = 4 (G - I) U, then project out the radial component per row.
  Matrix grad_unit = matmul(residual, unit);
  out.grad = Matrix(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    const auto u = unit.row(i);
    double radial = 0.0;
    for (std::size_t k = 0; k < d; ++k) radial += u[k] * 4.0 * grad_unit(i, k);
    for (std::size_t k = 0; k < d; ++k) {
      out.grad(i, k) = (4.0 * grad_unit(i, k) - radial * u[k]) / norms[i];
    }
  }
  return out;
}

PretrainLoss pretrain_loss(const Matrix& logits, const Matrix& targets, const Matrix& theta_pb,
                           const PretrainLossConfig& cfg) {
  const std::size_t b = logits.rows();
  if (targets.rows() != b || targets.cols() != logits.cols() || theta_pb.rows() != b || b == 0) {
    throw Error(ErrorCode::ShapeMismatch, "pretrain_loss: inconsistent batch shapes");
  }
  PretrainLoss out;
  out.logits_grad = Matrix(b, logits.cols());
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto ce = softmax_ce(logits.row(i), targets.row(i));
    out.ce += ce.loss * inv_b;
    for (std::size_t k = 0; k < logits.cols(); ++k) out.logits_grad(i, k) = ce.grad[k] * inv_b;
  }
  out.features_grad = Matrix(b, theta_pb.cols());
  out.total = out.ce;
  if (cfg.lambda_ortho != 0.0) {
    auto ortho = ortho_loss(theta_pb);
    out.ortho = ortho.loss;
    out.total = out.ce + cfg.lambda_ortho * ortho.loss;
    for (std::size_t k = 0; k < ortho.grad.size(); ++k) {
      out.features_grad.data()[k] = cfg.lambda_ortho * ortho.grad.data()[k];
    }
  }
  return out;
}

LossAndGrad multi_margin_loss(std::span<const double> scores, std::size_t gt, double margin) {
  if (gt >= scores.size()) {
    throw Error(ErrorCode::InvalidArgument, "multi_margin_loss: gt " + std::to_string(gt) +
                                                " out of range " + std::to_string(scores.size()));
  }
  const double n = static_cast<double>(scores.size());
  LossAndGrad out;
  out.grad.assign(scores.size(), 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i == gt) continue;
    const double hinge = margin - scores[gt] + scores[i];
    if (hinge > 0.0) {
      out.loss += hinge * hinge;
      out.grad[i] += 2.0 * hinge / n;
      out.grad[gt] -= 2.0 * hinge / n;
    }
  }
  out.loss /= n;
  return out;
}

double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  return a + b > 0.0 ? a / (a + b) : 0.5;
}

Mixed mixup_with_lambda(std::span<const double> x1, std::span<const double> x2,
                        std::span<const double> y1, std::span<const double> y2, double lambda) {
  if (x1.size() != x2.size() || y1.size() != y2.size()) {
    throw Error(ErrorCode::ShapeMismatch, "mixup operands differ in size");
  }
  Mixed m;
  m.lambda = lambda;
  m.x.resize(x1.size());
  m.y.resize(y1.size());
  for (std::size_t i = 0; i < x1.size(); ++i) m.x[i] = lambda * x1[i] + (1.0 - lambda) * x2[i];
  for (std::size_t i = 0; i < y1.size(); ++i) m.y[i] = lambda * y1[i] + (1.0 - lambda) * y2[i];
  return m;
}

Mixed mixup(std::span<const double> x1, std::span<const double> x2, std::span<const double> y1,
            std::span<const double> y2, double alpha, std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "mixup alpha must be > 0");
  return mixup_with_lambda(x1, x2, y1, y2, sample_beta(alpha, rng));
}

Mixed cutmix_with_box(std::span<const double> x1, std::span<const double> x2,
                      std::span<const double> y1, std::span<const double> y2, GridShape grid,
                      Box box) {
  if (x1.size() != grid.size() || x2.size() != grid.size() || y1.size() != y2.size()) {
    throw Error(ErrorCode::ShapeMismatch, "cutmix operands do not match the grid");
  }
  if (box.top > box.bottom || box.left > box.right || box.bottom > grid.height ||
      box.right > grid.width) {
    throw Error(ErrorCode::ShapeMismatch, "cutmix box outside the grid");
  }
  Mixed m;
  m.x.assign(x1.begin(), x1.end());
  const std::size_t plane = grid.height * grid.width;
  for (std::size_t c = 0; c < grid.channels; ++c)
    for (std::size_t r = box.top; r < box.bottom; ++r)
      for (std::size_t k = box.left; k < box.right; ++k) {
        const std::size_t idx = c * plane + r * grid.width + k;
        m.x[idx] = x2[idx];
      }
  const double pasted = static_cast<double>(box.area()) / static_cast<double>(plane);
  m.lambda = 1.0 - pasted;
  m.y.resize(y1.size());
  for (std::size_t i = 0; i < y1.size(); ++i) m.y[i] = m.lambda * y1[i] + pasted * y2[i];
  return m;
}

Box sample_cutmix_box(GridShape grid, double lambda, std::mt19937_64& rng) {
  const double ratio = std::sqrt(std::clamp(1.0 - lambda, 0.0, 1.0));
  const auto cut_h = static_cast<long>(std::floor(static_cast<double>(grid.height) * ratio));
  const auto cut_w = static_cast<long>(std::floor(static_cast<double>(grid.width) * ratio));
  std::uniform_int_distribution<long> cy(0, static_cast<long>(grid.height) - 1);
  std::uniform_int_distribution<long> cx(0, static_cast<long>(grid.width) - 1);
  const long y = cy(rng);
  const long x = cx(rng);
  auto clip = [](long v, long hi) { return static_cast<std::size_t>(std::clamp(v, 0L, hi)); };
  const auto h = static_cast<long>(grid.height);
  const auto w = static_cast<long>(grid.width);
  return Box{clip(y - cut_h / 2, h), clip(x - cut_w / 2, w), clip(y + (cut_h - cut_h / 2), h),
             clip(x + (cut_w - cut_w / 2), w)};
}

Mixed cutmix(std::span<const double> x1, std::span<const double> x2, std::span<const double> y1,
             std::span<const double> y2, GridShape grid, double alpha, std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "cutmix alpha must be > 0");
  const double lambda = sample_beta(alpha, rng);
  return cutmix_with_box(x1, x2, y1, y2, grid, sample_cutmix_box(grid, lambda, rng));
}

Augmentation sample_augmentation(const PretrainLossConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (!(u(rng) < cfg.mix_probability)) return Augmentation::None;
  return u(rng) < cfg.mixup_share ? Augmentation::Mixup : Augmentation::Cutmix;
}

}  // namespace ofscil
