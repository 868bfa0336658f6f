#pragma once

// Server-side phases on the base session: pretraining through a temporary
// fully connected classifier (FCC) and metalearning on ReLU-sharpened cosine
// scores against prototypes recomputed from meta-samples.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ofscil/backbone.hpp"
#include "ofscil/data_io.hpp"
#include "ofscil/explicit_memory.hpp"
#include "ofscil/losses.hpp"
#include "ofscil/online_learner.hpp"

namespace ofscil {

// Maps dataset labels to dense head indices, ascending by label.
class ClassIndex {
 public:
  ClassIndex() = default;
  explicit ClassIndex(const std::set<int>& labels);
  std::size_t size() const { return labels_.size(); }
  std::size_t index_of(int label) const;
  int label_at(std::size_t index) const { return labels_.at(index); }
  const std::vector<int>& labels() const { return labels_; }

 private:
  std::vector<int> labels_;
};

// Temporary classification head; discarded after pretraining.
struct FccHead {
  DenseLayer layer;  // |C0| x d_p, identity activation
  ClassIndex classes;

  // Requires |C0| < d_p.
  static FccHead init(const ClassIndex& classes, std::size_t d_p, std::uint64_t seed);
  Vector logits(std::span<const double> theta_p) const;
};

struct PretrainOptions {
  int epochs = 100;
  double lr = 0.05;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  GridShape grid{1, 16, 16};
  PretrainLossConfig loss;
  // Train on features passed through 8-bit quantize/dequantize (straight-through).
  bool quantized_features = false;
};

struct PretrainEpoch {
  int epoch = 0;
  double loss_ce = 0.0;
  double loss_ortho = 0.0;
  double accuracy = 0.0;  // FCC accuracy on the clean training set after the epoch
};

// Minibatch SGD on L_ce + lambda_ortho * L_ortho with one augmentation draw per batch.
// Throws NumericFailure on a non-finite loss.
std::vector<PretrainEpoch> pretrain(ModelParams& params, FccHead& fcc, const LabeledDataset& base,
                                    const PretrainOptions& opts);

double fcc_accuracy(const ModelParams& params, const FccHead& fcc, const LabeledDataset& ds);

// l_i = ReLU(cossim(theta_p, prototype_i)) for each prototype row.
Vector meta_scores(std::span<const double> theta_p, const Matrix& prototypes);
// Gradient w.r.t. theta_p given dL/dl.
Vector meta_scores_backward(std::span<const double> theta_p, const Matrix& prototypes,
                            std::span<const double> upstream);
// Gradient w.r.t. every prototype row given dL/dl.
Matrix meta_scores_prototype_grad(std::span<const double> theta_p, const Matrix& prototypes,
                                  std::span<const double> upstream);
// Forward through the backbone and FCR, then meta_scores.
Vector meta_score(const ModelParams& params, std::span<const double> x, const Matrix& prototypes,
                  ForwardRecord* record = nullptr);

enum class MetaObjective { MultiMargin, CrossEntropy };

struct MetaConfig {
  std::size_t meta_samples = 5;
  int iterations = 500;
  double lr = 0.3;
  double margin = 0.1;
  std::size_t query_batch = 64;
  MetaObjective objective = MetaObjective::MultiMargin;
  // Logit scale applied to the scores for the cross-entropy objective.
  double ce_scale = 10.0;
  // Backpropagate through the prototype means as well as the query path.
  bool grad_through_prototypes = false;
  bool quantized_features = false;

  void validate() const;
};

struct MetaIteration {
  int iteration = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // argmax accuracy of the query batch
};

// Throws InsufficientSamples if a class has fewer than meta_samples samples.
std::vector<MetaIteration> metalearn(ModelParams& params, const LabeledDataset& base,
                                     const MetaConfig& cfg, std::uint64_t seed);

// Class-mean prototypes (full precision) in ClassIndex order.
Matrix class_mean_prototypes(const ModelParams& params, const LabeledDataset& ds,
                             const ClassIndex& classes);

struct BaseMemories {
  ExplicitMemory em;
  ActivationMemory act_mem;
};

// learn_class over every base class with all of its samples.
BaseMemories build_base_em(const ModelParams& params, const LabeledDataset& base,
                           const QuantSpec& quant);

LabeledFeatures extract_features(const ModelParams& params, const LabeledDataset& ds);

// Mean |cos| over distinct pairs of rows.
double mean_offdiag_gram(const std::vector<Vector>& features);

void write_pretrain_history(std::ostream& out, const std::vector<PretrainEpoch>& history);
void write_meta_history(std::ostream& out, const std::vector<MetaIteration>& history);

}  // namespace ofscil
