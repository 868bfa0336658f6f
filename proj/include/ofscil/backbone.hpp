#pragma once

// Feature extractor f(.) followed by the fully connected reductor (FCR).
//
// The desk-scale network is a stack of dense layers over flattened inputs.
// Layers [0, split) form the backbone and produce theta_a; the last layer is
// the FCR and maps theta_a to the prototype feature theta_p.

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "ofscil/numerics.hpp"

namespace ofscil {

enum class Activation : std::uint8_t { Identity = 0, Relu = 1 };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Identity;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  bool operator==(const DenseLayer&) const = default;
};

struct ModelParams {
  std::vector<DenseLayer> layers;

  // Index of the FCR layer. Everything before it is the backbone.
  std::size_t split() const { return layers.empty() ? 0 : layers.size() - 1; }
  std::size_t input_dim() const;
  std::size_t d_a() const;
  std::size_t d_p() const;

  // Throws ShapeMismatch if layer shapes do not chain.
  void check_shapes() const;

  bool operator==(const ModelParams&) const = default;
};

// Layer widths for init_params. hidden excludes d_a (the last backbone layer).
// Table I stride variants map onto `hidden` depth/width at desk scale.
struct ModelShape {
  std::size_t input_dim = 256;
  std::vector<std::size_t> hidden = {128};
  std::size_t d_a = 128;
  std::size_t d_p = 64;
  Activation fcr_activation = Activation::Identity;
};

// Glorot-uniform weights, zero biases. Requires d_p < d_a.
ModelParams init_params(const ModelShape& shape, std::uint64_t seed);
void glorot_init(DenseLayer& layer, std::mt19937_64& rng);

// Inputs and outputs of every layer touched by a forward pass, needed by backward.
struct ForwardRecord {
  std::size_t first_layer = 0;
  std::vector<Vector> inputs;
  std::vector<Vector> outputs;

  bool empty() const { return inputs.empty(); }
  std::size_t end_layer() const { return first_layer + inputs.size(); }
  void clear() { inputs.clear(); outputs.clear(); first_layer = 0; }
};

// Gradient buffers shaped like ModelParams. Backward accumulates into them.
struct GradientTape {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Vector input;  // gradient w.r.t. the input of the earliest recorded layer

  static GradientTape zeros_like(const ModelParams& params);
  void zero();
};

enum class BackwardScope {
  Full,     // backbone + FCR
  FcrOnly,  // stop at the FCR boundary; backbone buffers stay untouched
};

Vector forward_backbone(const ModelParams& params, std::span<const double> x,
                        ForwardRecord* record = nullptr);
Vector forward_fcr(const ModelParams& params, std::span<const double> theta_a,
                   ForwardRecord* record = nullptr);
// forward_backbone followed by forward_fcr.
Vector forward_features(const ModelParams& params, std::span<const double> x,
                        ForwardRecord* record = nullptr);

// Number of forward_backbone calls made on this thread.
std::uint64_t forward_pass_count();
void reset_forward_pass_count();

// Backpropagates `upstream` (gradient w.r.t. the last recorded output) and
// accumulates into `tape`. Returns the gradient w.r.t. the input of the first
// layer that was backpropagated through.
Vector backward(const ModelParams& params, const ForwardRecord& record,
                std::span<const double> upstream, GradientTape& tape,
                BackwardScope scope = BackwardScope::Full);

// w <- w - lr * grad for every layer.
void sgd_step(ModelParams& params, const GradientTape& tape, double lr);

// Binary parameter file ("OFSC"). Round-trip is bit exact.
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

// FNV-1a over the raw bits of the selected layers.
std::uint64_t checksum(const ModelParams& params, std::size_t first_layer, std::size_t end_layer);
inline std::uint64_t backbone_checksum(const ModelParams& p) { return checksum(p, 0, p.split()); }
inline std::uint64_t fcr_checksum(const ModelParams& p) {
  return checksum(p, p.split(), p.layers.size());
}

}  // namespace ofscil
