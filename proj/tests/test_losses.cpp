#include <gtest/gtest.h>

#include <cmath>

#include "ofscil/losses.hpp"
#include "support.hpp"

using namespace ofscil;
using ofscil::testing::numeric_grad;
using ofscil::testing::random_matrix;
using ofscil::testing::random_vector;
using ofscil::testing::rel_err;

namespace {

// Direct Gram evaluation of sum (G - I)^2 on normalized rows.
double ortho_oracle(const Matrix& x) {
  std::vector<Vector> u;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    const double n = norm(r);
    Vector v(r.begin(), r.end());
    for (auto& e : v) e /= n;
    u.push_back(v);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < u.size(); ++j) {
      const double g = dot(u[i], u[j]) - (i == j ? 1.0 : 0.0);
      s += g * g;
    }
  return s;
}

double mm_oracle(const Vector& l, std::size_t gt, double m) {
  double s = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (i == gt) continue;
    const double h = std::max(0.0, m - l[gt] + l[i]);
    s += h * h;
  }
  return s / static_cast<double>(l.size());
}

Matrix one_hot_rows(const std::vector<std::size_t>& labels, std::size_t classes) {
  Matrix t(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) t(i, labels[i]) = 1.0;
  return t;
}

}  // namespace

TEST(OrthoLoss, OrthonormalRowsGiveZero) {
  const auto r = ortho_loss(Matrix::from_rows({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}));
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(OrthoLoss, TwoIdenticalRows) {
  const auto r = ortho_loss(Matrix::from_rows({{0.6, 0.8}, {0.6, 0.8}}));
  EXPECT_NEAR(r.loss, 2.0, 1e-12);
}

TEST(OrthoLoss, MatchesGramOracle) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = random_matrix(2 + t % 6, 5, rng);
    EXPECT_NEAR(ortho_loss(x).loss, ortho_oracle(x), 1e-12);
  }
}

TEST(OrthoLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(32);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = random_matrix(2 + t % 5, 4 + t % 3, rng);
    const auto r = ortho_loss(x);
    const Vector num = numeric_grad(
        [&](const Vector& v) { return ortho_loss(Matrix(x.rows(), x.cols(), v)).loss; }, x.data());
    EXPECT_LT(rel_err(r.grad.data(), num), 1e-5);
  }
}

TEST(OrthoLoss, ZeroIffOrthogonal) {
  EXPECT_LT(ortho_loss(Matrix::from_rows({{2, 0}, {0, -3}})).loss, 1e-10);
  EXPECT_GT(ortho_loss(Matrix::from_rows({{1, 0}, {1, 1e-3}})).loss, 1e-10);
  std::mt19937_64 rng(33);
  for (int t = 0; t < 20; ++t) EXPECT_GE(ortho_loss(random_matrix(4, 3, rng)).loss, 0.0);
}

TEST(OrthoLoss, RowScaleInvariant) {
  std::mt19937_64 rng(34);
  for (int t = 0; t < 20; ++t) {
    Matrix x = random_matrix(5, 6, rng);
    const double before = ortho_loss(x).loss;
    const double c = std::uniform_real_distribution<double>(0.1, 50.0)(rng);
    for (auto& v : x.row(t % 5)) v *= c;
    EXPECT_LT(std::abs(ortho_loss(x).loss - before) / before, 1e-10);
  }
}

TEST(OrthoLoss, Errors) {
  EXPECT_THROW(ortho_loss(Matrix(1, 3, 1.0)), Error);
  try {
    ortho_loss(Matrix::from_rows({{1, 0}, {0, 0}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroNorm);
  }
}

TEST(PretrainLoss, ZeroLambdaEqualsCrossEntropy) {
  std::mt19937_64 rng(35);
  const Matrix logits = random_matrix(4, 3, rng);
  const Matrix targets = one_hot_rows({0, 2, 1, 1}, 3);
  PretrainLossConfig cfg;
  cfg.lambda_ortho = 0.0;
  const auto r = pretrain_loss(logits, targets, random_matrix(4, 5, rng), cfg);
  double ce = 0.0;
  for (std::size_t i = 0; i < 4; ++i) ce += softmax_ce(logits.row(i), targets.row(i)).loss;
  EXPECT_EQ(r.total, ce / 4.0);
  for (double g : r.features_grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(PretrainLoss, OrthonormalBatchEqualsCe) {
  std::mt19937_64 rng(36);
  const Matrix logits = random_matrix(3, 4, rng);
  const Matrix targets = one_hot_rows({0, 1, 3}, 4);
  const Matrix feats = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const auto r = pretrain_loss(logits, targets, feats, PretrainLossConfig{});
  EXPECT_EQ(r.ortho, 0.0);
  EXPECT_EQ(r.total, r.ce);
}

TEST(PretrainLoss, LinearInLambda) {
  std::mt19937_64 rng(37);
  const Matrix logits = random_matrix(5, 3, rng);
  const Matrix targets = one_hot_rows({0, 1, 2, 0, 1}, 3);
  const Matrix feats = random_matrix(5, 4, rng);
  PretrainLossConfig c1, c2;
  c1.lambda_ortho = 1.0;
  c2.lambda_ortho = 2.0;
  const auto r1 = pretrain_loss(logits, targets, feats, c1);
  const auto r2 = pretrain_loss(logits, targets, feats, c2);
  EXPECT_NEAR(r2.total - r1.total, r1.ortho, 1e-12);
}

TEST(PretrainLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(38);
  for (int t = 0; t < 20; ++t) {
    const std::size_t b = 2 + t % 4, c = 3, d = 4;
    const Matrix logits = random_matrix(b, c, rng);
    const Matrix feats = random_matrix(b, d, rng);
    Matrix targets(b, c);
    for (std::size_t i = 0; i < b; ++i) {
      const double lam = std::uniform_real_distribution<double>(0, 1)(rng);
      targets(i, i % c) += lam;
      targets(i, (i + 1) % c) += 1 - lam;
    }
    PretrainLossConfig cfg;
    const auto r = pretrain_loss(logits, targets, feats, cfg);
    const Vector num_l = numeric_grad(
        [&](const Vector& v) { return pretrain_loss(Matrix(b, c, v), targets, feats, cfg).total; },
        logits.data());
    const Vector num_f = numeric_grad(
        [&](const Vector& v) { return pretrain_loss(logits, targets, Matrix(b, d, v), cfg).total; },
        feats.data());
    EXPECT_LT(rel_err(r.logits_grad.data(), num_l), 1e-4);
    EXPECT_LT(rel_err(r.features_grad.data(), num_f), 1e-4);
  }
}

TEST(MultiMargin, SatisfiedMarginsGiveZero) {
  const auto r = multi_margin_loss(Vector{1, 0, 0}, 0, 0.1);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad, (Vector{0, 0, 0}));
}

TEST(MultiMargin, TiedScores) { EXPECT_NEAR(multi_margin_loss(Vector{0.5, 0.5}, 0, 0.1).loss, 0.005, 1e-15); }

TEST(MultiMargin, MatchesOracle) {
  std::mt19937_64 rng(39);
  for (int t = 0; t < 50; ++t) {
    const Vector l = random_vector(2 + t % 7, rng, 0.0, 1.0);
    const std::size_t gt = t % l.size();
    EXPECT_NEAR(multi_margin_loss(l, gt, 0.1).loss, mm_oracle(l, gt, 0.1), 1e-15);
  }
}

TEST(MultiMargin, GradientAwayFromKinks) {
  std::mt19937_64 rng(40);
  int checked = 0;
  while (checked < 20) {
    const Vector l = random_vector(6, rng, 0.0, 1.0);
    const std::size_t gt = checked % 6;
    bool near_kink = false;
    for (std::size_t i = 0; i < l.size(); ++i)
      if (i != gt && std::abs(0.3 - l[gt] + l[i]) <= 1e-3) near_kink = true;
    if (near_kink) continue;
    const Vector num = numeric_grad([&](const Vector& x) { return multi_margin_loss(x, gt, 0.3).loss; }, l);
    const Vector g = multi_margin_loss(l, gt, 0.3).grad;
    if (norm(num) == 0.0) {
      EXPECT_EQ(norm(g), 0.0);
    } else {
      EXPECT_LT(rel_err(g, num), 1e-5);
    }
    ++checked;
  }
}

TEST(MultiMargin, ShiftInvariant) {
  std::mt19937_64 rng(41);
  for (int t = 0; t < 50; ++t) {
    Vector l = random_vector(5, rng);
    const double before = multi_margin_loss(l, 2, 0.2).loss;
    for (auto& x : l) x += 0.37;
    EXPECT_LT(std::abs(multi_margin_loss(l, 2, 0.2).loss - before), 1e-12);
  }
}

TEST(Mixup, LambdaOneKeepsFirst) {
  const Vector x1{1, 2, 3}, x2{4, 5, 6}, y1{1, 0}, y2{0, 1};
  const Mixed m = mixup_with_lambda(x1, x2, y1, y2, 1.0);
  EXPECT_EQ(m.x, x1);
  EXPECT_EQ(m.y, y1);
}

TEST(Mixup, Midpoint) {
  const Mixed m = mixup_with_lambda(Vector{0, 2}, Vector{2, 0}, Vector{1, 0}, Vector{0, 1}, 0.5);
  EXPECT_EQ(m.x, (Vector{1, 1}));
  EXPECT_EQ(m.y, (Vector{0.5, 0.5}));
}

TEST(Mixup, LabelsSumToOne) {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 1000; ++t) {
    const Mixed m = mixup(Vector{0, 1}, Vector{1, 0}, one_hot(t % 3, 3), one_hot((t + 1) % 3, 3), 1.0, rng);
    EXPECT_NEAR(m.y[0] + m.y[1] + m.y[2], 1.0, 1e-15);
    EXPECT_GE(m.lambda, 0.0);
    EXPECT_LE(m.lambda, 1.0);
  }
}

TEST(SampleBeta, MeanAndVariance) {
  std::mt19937_64 rng(43);
  const double a = 2.0;
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = sample_beta(a, rng);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 0.005);
  EXPECT_NEAR(var, 1.0 / (4.0 * (2 * a + 1)), 0.002);
}

TEST(Cutmix, EmptyPatchKeepsFirst) {
  const GridShape g{1, 3, 3};
  std::mt19937_64 rng(44);
  const Vector x1 = random_vector(9, rng), x2 = random_vector(9, rng);
  const Mixed m = cutmix_with_box(x1, x2, Vector{1, 0}, Vector{0, 1}, g, Box{1, 1, 1, 1});
  EXPECT_EQ(m.x, x1);
  EXPECT_EQ(m.y, (Vector{1, 0}));
}

TEST(Cutmix, FullPatchTakesSecond) {
  const GridShape g{2, 3, 4};
  std::mt19937_64 rng(45);
  const Vector x1 = random_vector(24, rng), x2 = random_vector(24, rng);
  const Mixed m = cutmix_with_box(x1, x2, Vector{1, 0}, Vector{0, 1}, g, Box{0, 0, 3, 4});
  EXPECT_EQ(m.x, x2);
  EXPECT_EQ(m.y, (Vector{0, 1}));
}

TEST(Cutmix, LabelWeightIsPatchArea) {
  const GridShape g{1, 4, 4};
  const Vector x1(16, 0.0), x2(16, 1.0);
  const Mixed m = cutmix_with_box(x1, x2, Vector{1, 0}, Vector{0, 1}, g, Box{1, 0, 3, 3});
  EXPECT_EQ(m.y[1], 6.0 / 16.0);
  double pasted = 0.0;
  for (double v : m.x) pasted += v;
  EXPECT_EQ(pasted, 6.0);
}

TEST(Cutmix, SampledLabelMatchesPixels) {
  const GridShape g{3, 8, 8};
  std::mt19937_64 rng(46);
  const Vector x1(g.size(), 0.0), x2(g.size(), 1.0);
  for (int t = 0; t < 200; ++t) {
    const Mixed m = cutmix(x1, x2, Vector{1, 0}, Vector{0, 1}, g, 1.0, rng);
    double pasted = 0.0;
    for (double v : m.x) pasted += v;
    EXPECT_EQ(m.y[1], pasted / static_cast<double>(g.size()));
  }
}

TEST(Augmentation, NeverWhenProbabilityZero) {
  PretrainLossConfig cfg;
  cfg.mix_probability = 0.0;
  std::mt19937_64 rng(47);
  for (int i = 0; i < 10000; ++i) EXPECT_EQ(sample_augmentation(cfg, rng), Augmentation::None);
}

TEST(Augmentation, AlwaysWhenProbabilityOne) {
  PretrainLossConfig cfg;
  cfg.mix_probability = 1.0;
  std::mt19937_64 rng(48);
  for (int i = 0; i < 10000; ++i) EXPECT_NE(sample_augmentation(cfg, rng), Augmentation::None);
}

TEST(Augmentation, DefaultFrequency) {
  const PretrainLossConfig cfg;
  std::mt19937_64 rng(49);
  int mixed = 0, mix = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto a = sample_augmentation(cfg, rng);
    if (a != Augmentation::None) ++mixed;
    if (a == Augmentation::Mixup) ++mix;
  }
  EXPECT_NEAR(static_cast<double>(mixed) / n, 0.4, 0.01);
  EXPECT_NEAR(static_cast<double>(mix) / mixed, 0.5, 0.02);
}

TEST(PretrainLossConfig, Validation) {
  PretrainLossConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.mix_probability = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.lambda_ortho = -1;
  EXPECT_THROW(cfg.validate(), Error);
}
