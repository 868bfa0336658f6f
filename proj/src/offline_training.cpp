#include "ofscil/offline_training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

namespace ofscil {

namespace {

Vector maybe_quantize(const Vector& theta_p, bool enabled) {
  if (!enabled) return theta_p;
  return dequantize(quantize_feature(theta_p, 8));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

ClassIndex::ClassIndex(const std::set<int>& labels) : labels_(labels.begin(), labels.end()) {}

std::size_t ClassIndex::index_of(int label) const {
  auto it = std::lower_bound(labels_.begin(), labels_.end(), label);
  if (it == labels_.end() || *it != label) {
    throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(label) + " outside the base classes");
  }
  return static_cast<std::size_t>(it - labels_.begin());
}

FccHead FccHead::init(const ClassIndex& classes, std::size_t d_p, std::uint64_t seed) {
  if (classes.size() >= d_p) {
    throw Error(ErrorCode::InvalidArgument, "FCC needs |C0| (" + std::to_string(classes.size()) +
                                                ") < d_p (" + std::to_string(d_p) + ")");
  }
  FccHead head;
  head.classes = classes;
  head.layer = {Matrix(classes.size(), d_p), Vector(classes.size(), 0.0), Activation::Identity};
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  glorot_init(head.layer, rng);
  return head;
}

Vector FccHead::logits(std::span<const double> theta_p) const {
  return affine(layer.weight, theta_p, layer.bias);
}

double fcc_accuracy(const ModelParams& params, const FccHead& fcc, const LabeledDataset& ds) {
  if (ds.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : ds.samples) {
    const Vector logits = fcc.logits(forward_features(params, s.input));
    if (fcc.classes.label_at(argmax(logits)) == s.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

std::vector<PretrainEpoch> pretrain(ModelParams& params, FccHead& fcc, const LabeledDataset& base,
                                    const PretrainOptions& opts) {
  opts.loss.validate();
  if (opts.batch_size == 0 || opts.epochs < 0) {
    throw Error(ErrorCode::InvalidArgument, "pretrain needs a positive batch size");
  }
  if (base.empty()) throw Error(ErrorCode::EmptySampleSet, "empty base session");
  if (fcc.layer.in_dim() != params.d_p()) {
    throw Error(ErrorCode::ShapeMismatch, "FCC input does not match d_p");
  }
  const std::size_t num_classes = fcc.classes.size();
  std::vector<std::size_t> targets(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) targets[i] = fcc.classes.index_of(base.samples[i].label);

  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(base.size());
  std::iota(order.begin(), order.end(), 0);

  GradientTape tape = GradientTape::zeros_like(params);
  Matrix fcc_wgrad(fcc.layer.weight.rows(), fcc.layer.weight.cols());
  Vector fcc_bgrad(fcc.layer.bias.size());
  std::vector<ForwardRecord> records;
  std::vector<PretrainEpoch> history;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double ce_sum = 0.0, ortho_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t b = std::min(opts.batch_size, order.size() - start);
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(start + b));

      std::vector<Vector> inputs(b);
      Matrix target_rows(b, num_classes);
      const Augmentation aug = sample_augmentation(opts.loss, rng);
      if (aug == Augmentation::None) {
        for (std::size_t i = 0; i < b; ++i) {
          inputs[i] = base.samples[batch[i]].input;
          target_rows(i, targets[batch[i]]) = 1.0;
        }
      } else {
        std::vector<std::size_t> partner = batch;
        std::shuffle(partner.begin(), partner.end(), rng);
        const double lambda = sample_beta(opts.loss.mix_alpha, rng);
        const Box box = aug == Augmentation::Cutmix ? sample_cutmix_box(opts.grid, lambda, rng) : Box{};
        for (std::size_t i = 0; i < b; ++i) {
          const auto& x1 = base.samples[batch[i]].input;
          const auto& x2 = base.samples[partner[i]].input;
          const Vector y1 = one_hot(targets[batch[i]], num_classes);
          const Vector y2 = one_hot(targets[partner[i]], num_classes);
          Mixed m = aug == Augmentation::Mixup ? mixup_with_lambda(x1, x2, y1, y2, lambda)
                                               : cutmix_with_box(x1, x2, y1, y2, opts.grid, box);
          inputs[i] = std::move(m.x);
          std::copy(m.y.begin(), m.y.end(), target_rows.row(i).begin());
        }
      }

      records.assign(b, ForwardRecord{});
      Matrix features(b, params.d_p());
      Matrix logits(b, num_classes);
      for (std::size_t i = 0; i < b; ++i) {
        const Vector theta_p = maybe_quantize(forward_features(params, inputs[i], &records[i]),
                                              opts.quantized_features);
        std::copy(theta_p.begin(), theta_p.end(), features.row(i).begin());
        const Vector l = fcc.logits(theta_p);
        std::copy(l.begin(), l.end(), logits.row(i).begin());
      }

      PretrainLossConfig loss_cfg = opts.loss;
      if (b < 2) loss_cfg.lambda_ortho = 0.0;
      const PretrainLoss loss = pretrain_loss(logits, target_rows, features, loss_cfg);
      if (!std::isfinite(loss.total)) {
        throw Error(ErrorCode::NumericFailure, "non-finite pretraining loss in epoch " + std::to_string(epoch));
      }
      ce_sum += loss.ce;
      ortho_sum += loss.ortho;
      ++batches;

      tape.zero();
      std::fill(fcc_wgrad.data().begin(), fcc_wgrad.data().end(), 0.0);
      std::fill(fcc_bgrad.begin(), fcc_bgrad.end(), 0.0);
      for (std::size_t i = 0; i < b; ++i) {
        const auto g = loss.logits_grad.row(i);
        const auto f = features.row(i);
        Vector feature_grad(loss.features_grad.row(i).begin(), loss.features_grad.row(i).end());
        for (std::size_t c = 0; c < num_classes; ++c) {
          fcc_bgrad[c] += g[c];
          const auto wr = fcc.layer.weight.row(c);
          auto gr = fcc_wgrad.row(c);
          for (std::size_t k = 0; k < f.size(); ++k) {
            gr[k] += g[c] * f[k];
            feature_grad[k] += wr[k] * g[c];
          }
        }
        backward(params, records[i], feature_grad, tape);
      }
      sgd_step(params, tape, opts.lr);
      for (std::size_t k = 0; k < fcc_wgrad.size(); ++k) fcc.layer.weight.data()[k] -= opts.lr * fcc_wgrad.data()[k];
      for (std::size_t k = 0; k < fcc_bgrad.size(); ++k) fcc.layer.bias[k] -= opts.lr * fcc_bgrad[k];
    }
    history.push_back({epoch + 1, ce_sum / static_cast<double>(batches),
                       ortho_sum / static_cast<double>(batches), fcc_accuracy(params, fcc, base)});
  }
  return history;
}

Vector meta_scores(std::span<const double> theta_p, const Matrix& prototypes) {
  Vector l(prototypes.rows());
  for (std::size_t i = 0; i < prototypes.rows(); ++i) {
    const double c = cossim(theta_p, prototypes.row(i));
    l[i] = c > 0.0 ? c : 0.0;
  }
  return l;
}

Vector meta_scores_backward(std::span<const double> theta_p, const Matrix& prototypes,
                            std::span<const double> upstream) {
  Vector grad(theta_p.size(), 0.0);
  for (std::size_t i = 0; i < prototypes.rows(); ++i) {
    if (upstream[i] == 0.0 || !(cossim(theta_p, prototypes.row(i)) > 0.0)) continue;
    const Vector g = cossim_grad(theta_p, prototypes.row(i));
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += upstream[i] * g[k];
  }
  return grad;
}

Matrix meta_scores_prototype_grad(std::span<const double> theta_p, const Matrix& prototypes,
                                  std::span<const double> upstream) {
  Matrix grad(prototypes.rows(), prototypes.cols());
  for (std::size_t i = 0; i < prototypes.rows(); ++i) {
    if (upstream[i] == 0.0 || !(cossim(theta_p, prototypes.row(i)) > 0.0)) continue;
    const Vector g = cossim_grad(prototypes.row(i), theta_p);
    for (std::size_t k = 0; k < g.size(); ++k) grad(i, k) = upstream[i] * g[k];
  }
  return grad;
}

Vector meta_score(const ModelParams& params, std::span<const double> x, const Matrix& prototypes,
                  ForwardRecord* record) {
  return meta_scores(forward_features(params, x, record), prototypes);
}

void MetaConfig::validate() const {
  if (meta_samples < 1) throw Error(ErrorCode::InvalidArgument, "meta_samples must be >= 1");
  if (iterations < 0) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 0");
  if (query_batch < 1) throw Error(ErrorCode::InvalidArgument, "query_batch must be >= 1");
  if (!(margin > 0.0)) throw Error(ErrorCode::InvalidArgument, "margin must be > 0");
  if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lr must be >= 0");
}

std::vector<MetaIteration> metalearn(ModelParams& params, const LabeledDataset& base,
                                     const MetaConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ClassIndex classes(base.classes());
  std::vector<std::vector<std::size_t>> by_class(classes.size());
  for (std::size_t i = 0; i < base.size(); ++i) by_class[classes.index_of(base.samples[i].label)].push_back(i);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < cfg.meta_samples) {
      throw Error(ErrorCode::InsufficientSamples,
                  "class " + std::to_string(classes.label_at(c)) + " has " +
                      std::to_string(by_class[c].size()) + " samples, metalearning needs " +
                      std::to_string(cfg.meta_samples));
    }
  }

  std::mt19937_64 rng(seed);
  GradientTape tape = GradientTape::zeros_like(params);
  std::vector<MetaIteration> history;
  const std::size_t n_meta = cfg.meta_samples;

  for (int it = 0; it < cfg.iterations; ++it) {
    Matrix prototypes(classes.size(), params.d_p());
    std::vector<std::vector<ForwardRecord>> meta_records(classes.size());
    std::vector<char> is_meta(base.size(), 0);
    for (std::size_t c = 0; c < classes.size(); ++c) {
      auto pool = by_class[c];
      std::shuffle(pool.begin(), pool.end(), rng);
      if (cfg.grad_through_prototypes) meta_records[c].resize(n_meta);
      for (std::size_t k = 0; k < n_meta; ++k) {
        is_meta[pool[k]] = 1;
        const Vector theta_p = maybe_quantize(
            forward_features(params, base.samples[pool[k]].input,
                             cfg.grad_through_prototypes ? &meta_records[c][k] : nullptr),
            cfg.quantized_features);
        for (std::size_t d = 0; d < theta_p.size(); ++d) prototypes(c, d) += theta_p[d] / static_cast<double>(n_meta);
      }
    }

    std::vector<std::size_t> queries;
    for (std::size_t i = 0; i < base.size(); ++i)
      if (!is_meta[i]) queries.push_back(i);
    std::shuffle(queries.begin(), queries.end(), rng);
    if (queries.size() > cfg.query_batch) queries.resize(cfg.query_batch);
    if (queries.empty()) continue;

    tape.zero();
    Matrix proto_grad(prototypes.rows(), prototypes.cols());
    const double inv_q = 1.0 / static_cast<double>(queries.size());
    double loss_sum = 0.0;
    std::size_t hits = 0;
    ForwardRecord record;
    for (std::size_t q : queries) {
      const std::size_t gt = classes.index_of(base.samples[q].label);
      const Vector theta_p =
          maybe_quantize(forward_features(params, base.samples[q].input, &record), cfg.quantized_features);
      const Vector scores = meta_scores(theta_p, prototypes);
      if (argmax(scores) == gt) ++hits;
      LossAndGrad lg;
      if (cfg.objective == MetaObjective::MultiMargin) {
        lg = multi_margin_loss(scores, gt, cfg.margin);
      } else {
        Vector scaled = scores;
        for (auto& s : scaled) s *= cfg.ce_scale;
        lg = softmax_ce(scaled, gt);
        for (auto& g : lg.grad) g *= cfg.ce_scale;
      }
      loss_sum += lg.loss;
      for (auto& g : lg.grad) g *= inv_q;
      if (std::all_of(lg.grad.begin(), lg.grad.end(), [](double g) { return g == 0.0; })) continue;
      backward(params, record, meta_scores_backward(theta_p, prototypes, lg.grad), tape);
      if (cfg.grad_through_prototypes) {
        const Matrix pg = meta_scores_prototype_grad(theta_p, prototypes, lg.grad);
        for (std::size_t k = 0; k < pg.size(); ++k) proto_grad.data()[k] += pg.data()[k];
      }
    }
    if (!std::isfinite(loss_sum)) {
      throw Error(ErrorCode::NumericFailure, "non-finite metalearning loss at iteration " + std::to_string(it));
    }
    if (cfg.grad_through_prototypes) {
      for (std::size_t c = 0; c < classes.size(); ++c) {
        Vector g(proto_grad.row(c).begin(), proto_grad.row(c).end());
        if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
        for (auto& v : g) v /= static_cast<double>(n_meta);
        for (const auto& rec : meta_records[c]) backward(params, rec, g, tape);
      }
    }
    sgd_step(params, tape, cfg.lr);
    history.push_back({it + 1, loss_sum * inv_q,
                       static_cast<double>(hits) / static_cast<double>(queries.size())});
  }
  return history;
}

Matrix class_mean_prototypes(const ModelParams& params, const LabeledDataset& ds,
                             const ClassIndex& classes) {
  Matrix protos(classes.size(), params.d_p());
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& s : ds.samples) {
    const std::size_t c = classes.index_of(s.label);
    const Vector theta_p = forward_features(params, s.input);
    for (std::size_t d = 0; d < theta_p.size(); ++d) protos(c, d) += theta_p[d];
    ++counts[c];
  }
  for (std::size_t c = 0; c < classes.size(); ++c)
    for (std::size_t d = 0; d < protos.cols(); ++d)
      if (counts[c] > 0) protos(c, d) /= static_cast<double>(counts[c]);
  return protos;
}

BaseMemories build_base_em(const ModelParams& params, const LabeledDataset& base,
                           const QuantSpec& quant) {
  BaseMemories out{ExplicitMemory(params.d_p(), quant), ActivationMemory(params.d_a())};
  for (int label : base.classes()) {
    const auto inputs = base.inputs_of(label);
    learn_class(out.em, out.act_mem, params, inputs, label);
  }
  return out;
}

LabeledFeatures extract_features(const ModelParams& params, const LabeledDataset& ds) {
  LabeledFeatures out;
  out.features.reserve(ds.size());
  out.labels.reserve(ds.size());
  for (const auto& s : ds.samples) {
    out.features.push_back(forward_features(params, s.input));
    out.labels.push_back(s.label);
  }
  return out;
}

double mean_offdiag_gram(const std::vector<Vector>& features) {
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (std::size_t j = i + 1; j < features.size(); ++j) {
      sum += std::abs(cossim(features[i], features[j]));
      ++pairs;
    }
  }
  return pairs == 0 ? 0.0 : sum / static_cast<double>(pairs);
}

void write_pretrain_history(std::ostream& out, const std::vector<PretrainEpoch>& history) {
  out << "epoch,loss_ce,loss_ortho,accuracy\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << fmt(h.loss_ce) << ',' << fmt(h.loss_ortho) << ',' << fmt(h.accuracy) << '\n';
  }
}

void write_meta_history(std::ostream& out, const std::vector<MetaIteration>& history) {
  out << "iteration,loss,accuracy\n";
  for (const auto& h : history) out << h.iteration << ',' << fmt(h.loss) << ',' << fmt(h.accuracy) << '\n';
}

}  // namespace ofscil
