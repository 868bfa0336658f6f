#include "ofscil/backbone.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "binary_io.hpp"

namespace ofscil {

namespace {

constexpr std::string_view kParamMagic = "OFSC";
constexpr std::uint32_t kParamVersion = 1;

thread_local std::uint64_t g_forward_passes = 0;

Vector apply_layer(const DenseLayer& layer, std::span<const double> x) {
  Vector y = affine(layer.weight, x, layer.bias);
  if (layer.activation == Activation::Relu) {
    for (auto& v : y) v = v > 0.0 ? v : 0.0;
  }
  return y;
}

void record_layer(ForwardRecord* record, std::size_t layer, std::span<const double> in,
                  const Vector& out) {
  if (record == nullptr) return;
  if (record->empty() || record->end_layer() != layer) {
    record->clear();
    record->first_layer = layer;
  }
  record->inputs.emplace_back(in.begin(), in.end());
  record->outputs.push_back(out);
}

}  // namespace

std::size_t ModelParams::input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }

std::size_t ModelParams::d_a() const {
  if (layers.empty()) return 0;
  return layers.back().in_dim();
}

std::size_t ModelParams::d_p() const { return layers.empty() ? 0 : layers.back().out_dim(); }

void ModelParams::check_shapes() const {
  if (layers.empty()) throw Error(ErrorCode::ShapeMismatch, "model has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.bias.size() != l.out_dim()) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(i) + ": bias size");
    }
    if (i > 0 && layers[i - 1].out_dim() != l.in_dim()) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(i) + " input " +
                                                std::to_string(l.in_dim()) + " != previous output " +
                                                std::to_string(layers[i - 1].out_dim()));
    }
  }
}

void glorot_init(DenseLayer& layer, std::mt19937_64& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(layer.in_dim() + layer.out_dim()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& w : layer.weight.data()) w = dist(rng);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  if (shape.d_p >= shape.d_a) {
    throw Error(ErrorCode::InvalidArgument, "d_p (" + std::to_string(shape.d_p) +
                                                ") must be smaller than d_a (" +
                                                std::to_string(shape.d_a) + ")");
  }
  if (shape.input_dim == 0 || shape.d_p == 0) {
    throw Error(ErrorCode::InvalidArgument, "zero-sized layer");
  }
  std::mt19937_64 rng(seed);
  ModelParams params;
  std::size_t in = shape.input_dim;
  auto add = [&](std::size_t out, Activation act) {
    DenseLayer layer{Matrix(out, in), Vector(out, 0.0), act};
    glorot_init(layer, rng);
    params.layers.push_back(std::move(layer));
    in = out;
  };
  for (std::size_t h : shape.hidden) add(h, Activation::Relu);
  add(shape.d_a, Activation::Relu);
  add(shape.d_p, shape.fcr_activation);
  return params;
}

GradientTape GradientTape::zeros_like(const ModelParams& params) {
  GradientTape tape;
  for (const auto& l : params.layers) {
    tape.weight.emplace_back(l.weight.rows(), l.weight.cols());
    tape.bias.emplace_back(l.bias.size(), 0.0);
  }
  return tape;
}

void GradientTape::zero() {
  for (auto& w : weight) std::fill(w.data().begin(), w.data().end(), 0.0);
  for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
  input.clear();
}

Vector forward_backbone(const ModelParams& params, std::span<const double> x,
                        ForwardRecord* record) {
  ++g_forward_passes;
  if (!params.layers.empty() && x.size() != params.input_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.size()) +
                                              " entries, model expects " +
                                              std::to_string(params.input_dim()));
  }
  if (record != nullptr) record->clear();
  Vector h(x.begin(), x.end());
  for (std::size_t i = 0; i < params.split(); ++i) {
    Vector out = apply_layer(params.layers[i], h);
    record_layer(record, i, h, out);
    h = std::move(out);
  }
  return h;
}

Vector forward_fcr(const ModelParams& params, std::span<const double> theta_a,
                   ForwardRecord* record) {
  if (params.layers.empty()) throw Error(ErrorCode::ShapeMismatch, "model has no FCR layer");
  const auto& fcr = params.layers[params.split()];
  if (theta_a.size() != fcr.in_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "theta_a has " + std::to_string(theta_a.size()) +
                                              " entries, FCR expects " +
                                              std::to_string(fcr.in_dim()));
  }
  Vector out = apply_layer(fcr, theta_a);
  record_layer(record, params.split(), theta_a, out);
  return out;
}

Vector forward_features(const ModelParams& params, std::span<const double> x,
                        ForwardRecord* record) {
  const Vector theta_a = forward_backbone(params, x, record);
  return forward_fcr(params, theta_a, record);
}

std::uint64_t forward_pass_count() { return g_forward_passes; }
void reset_forward_pass_count() { g_forward_passes = 0; }

Vector backward(const ModelParams& params, const ForwardRecord& record,
                std::span<const double> upstream, GradientTape& tape, BackwardScope scope) {
  if (record.empty()) throw Error(ErrorCode::NoForwardRecorded, "backward without forward");
  if (record.end_layer() > params.layers.size() || tape.weight.size() != params.layers.size()) {
    throw Error(ErrorCode::ShapeMismatch, "record/tape do not match the model");
  }
  if (upstream.size() != record.outputs.back().size()) {
    throw Error(ErrorCode::ShapeMismatch, "upstream gradient has " +
                                              std::to_string(upstream.size()) + " entries, expected " +
                                              std::to_string(record.outputs.back().size()));
  }
  const std::size_t stop =
      scope == BackwardScope::FcrOnly ? std::max(record.first_layer, params.split())
                                      : record.first_layer;
  Vector grad(upstream.begin(), upstream.end());
  for (std::size_t layer = record.end_layer(); layer-- > stop;) {
    const std::size_t k = layer - record.first_layer;
    const auto& l = params.layers[layer];
    const Vector& in = record.inputs[k];
    const Vector& out = record.outputs[k];
    if (l.activation == Activation::Relu) {
      for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(out[i] > 0.0)) grad[i] = 0.0;
    }
    auto& gw = tape.weight[layer];
    auto& gb = tape.bias[layer];
    for (std::size_t r = 0; r < l.out_dim(); ++r) {
      gb[r] += grad[r];
      auto row = gw.row(r);
      for (std::size_t c = 0; c < l.in_dim(); ++c) row[c] += grad[r] * in[c];
    }
    Vector down(l.in_dim(), 0.0);
    for (std::size_t r = 0; r < l.out_dim(); ++r) {
      const auto wr = l.weight.row(r);
      for (std::size_t c = 0; c < l.in_dim(); ++c) down[c] += wr[c] * grad[r];
    }
    grad = std::move(down);
  }
  tape.input = grad;
  return grad;
}

void sgd_step(ModelParams& params, const GradientTape& tape, double lr) {
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& w = params.layers[i].weight.data();
    const auto& gw = tape.weight[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k];
    auto& b = params.layers[i].bias;
    for (std::size_t k = 0; k < b.size(); ++k) b[k] -= lr * tape.bias[i][k];
  }
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  detail::write_magic(out, kParamMagic);
  detail::write_le<std::uint32_t>(out, kParamVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.rows()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.cols()));
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.activation));
  }
  for (const auto& l : params.layers) {
    for (double w : l.weight.data()) detail::write_f64(out, w);
    for (double b : l.bias) detail::write_f64(out, b);
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  auto bad = [&](const std::string& why) {
    return Error(ErrorCode::FormatVersionMismatch, path.string() + ": " + why);
  };
  if (!detail::read_magic(in, kParamMagic)) throw bad("bad magic");
  std::uint32_t version = 0, count = 0;
  if (!detail::read_le(in, version) || version != kParamVersion) throw bad("unsupported version");
  if (!detail::read_le(in, count) || count == 0) throw bad("bad layer count");

  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t rows = 0, cols = 0;
    std::uint8_t act = 0;
    if (!detail::read_le(in, rows) || !detail::read_le(in, cols) || !detail::read_le(in, act)) {
      throw bad("truncated layer table");
    }
    if (act > 1) throw bad("unknown activation " + std::to_string(act));
    params.layers.push_back({Matrix(rows, cols), Vector(rows, 0.0), static_cast<Activation>(act)});
  }
  for (auto& l : params.layers) {
    for (auto& w : l.weight.data())
      if (!detail::read_f64(in, w)) throw bad("truncated payload");
    for (auto& b : l.bias)
      if (!detail::read_f64(in, b)) throw bad("truncated payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw bad("trailing bytes");
  params.check_shapes();
  return params;
}

std::uint64_t checksum(const ModelParams& params, std::size_t first_layer, std::size_t end_layer) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t i = first_layer; i < end_layer && i < params.layers.size(); ++i) {
    for (double w : params.layers[i].weight.data()) mix(w);
    for (double b : params.layers[i].bias) mix(b);
  }
  return h;
}

}  // namespace ofscil
