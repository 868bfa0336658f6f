#pragma once

// Pretraining and metalearning objectives, plus the label-mixing augmentations.

#include <cstdint>
#include <random>

#include "ofscil/numerics.hpp"

namespace ofscil {

struct PretrainLossConfig {
  double lambda_ortho = 0.1;
  double mix_probability = 0.4;
  double mix_alpha = 1.0;
  // Share of mixup among augmented batches; the rest use cutmix.
  double mixup_share = 0.5;
  double margin = 0.1;

  void validate() const;
};

struct MatrixLossAndGrad {
  double loss = 0.0;
  Matrix grad;
};

// Sum over (G - I)^2 where G is the Gram matrix of the L2-normalized rows.
// Gradient is w.r.t. the unnormalized rows.
MatrixLossAndGrad ortho_loss(const Matrix& theta_pb);

struct PretrainLoss {
  double total = 0.0;
  double ce = 0.0;     // mean cross-entropy over the batch
  double ortho = 0.0;  // unweighted orthogonality term
  Matrix logits_grad;
  Matrix features_grad;
};

// L_ce + lambda_ortho * L_ortho. `targets` holds one probability row per sample.
// The orthogonality term is skipped when lambda_ortho == 0.
PretrainLoss pretrain_loss(const Matrix& logits, const Matrix& targets, const Matrix& theta_pb,
                           const PretrainLossConfig& cfg);

// Squared multi-margin loss over non-ground-truth scores, averaged over the
// number of classes. Subgradient at the hinge kink is 0.
LossAndGrad multi_margin_loss(std::span<const double> scores, std::size_t gt, double margin);

struct Mixed {
  Vector x;
  Vector y;
  double lambda = 1.0;  // weight of the first sample
};

double sample_beta(double alpha, std::mt19937_64& rng);

Mixed mixup_with_lambda(std::span<const double> x1, std::span<const double> x2,
                        std::span<const double> y1, std::span<const double> y2, double lambda);
Mixed mixup(std::span<const double> x1, std::span<const double> x2, std::span<const double> y1,
            std::span<const double> y2, double alpha, std::mt19937_64& rng);

// Inputs are channels x height x width, row-major.
struct GridShape {
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t size() const { return channels * height * width; }
};

// Half-open pixel rectangle [top, bottom) x [left, right).
struct Box {
  std::size_t top = 0, left = 0, bottom = 0, right = 0;
  std::size_t area() const { return (bottom - top) * (right - left); }
};

Mixed cutmix_with_box(std::span<const double> x1, std::span<const double> x2,
                      std::span<const double> y1, std::span<const double> y2, GridShape grid,
                      Box box);
Box sample_cutmix_box(GridShape grid, double lambda, std::mt19937_64& rng);
Mixed cutmix(std::span<const double> x1, std::span<const double> x2, std::span<const double> y1,
             std::span<const double> y2, GridShape grid, double alpha, std::mt19937_64& rng);

enum class Augmentation { None, Mixup, Cutmix };

// None with probability 1 - mix_probability, otherwise exactly one of the two.
Augmentation sample_augmentation(const PretrainLossConfig& cfg, std::mt19937_64& rng);

}  // namespace ofscil
