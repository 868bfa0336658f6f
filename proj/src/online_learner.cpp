#include "ofscil/online_learner.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "binary_io.hpp"

namespace ofscil {

namespace {
constexpr std::string_view kActivationMagic = "OFAM";
constexpr std::uint32_t kActivationVersion = 1;
}  // namespace

void ActivationMemory::insert(int class_id, Vector mean, std::int64_t count) {
  if (mean.size() != d_a_) {
    throw Error(ErrorCode::ShapeMismatch, "activation dimension " + std::to_string(mean.size()) +
                                              " != d_a " + std::to_string(d_a_));
  }
  if (contains(class_id)) throw Error(ErrorCode::DuplicateClass, "class " + std::to_string(class_id));
  means_.emplace(class_id, std::move(mean));
  counts_.emplace(class_id, count);
}

const Vector& ActivationMemory::mean(int class_id) const {
  auto it = means_.find(class_id);
  if (it == means_.end()) {
    throw Error(ErrorCode::InvalidArgument, "class " + std::to_string(class_id) +
                                                " not in activation memory");
  }
  return it->second;
}

std::vector<int> ActivationMemory::class_ids() const {
  std::vector<int> ids;
  for (const auto& [id, _] : means_) ids.push_back(id);
  return ids;
}

void save_activation_memory(const ActivationMemory& mem, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  detail::write_magic(out, kActivationMagic);
  detail::write_le<std::uint32_t>(out, kActivationVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(mem.size()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(mem.d_a()));
  detail::write_le<std::uint32_t>(out, 64);  // value bits (f64)
  detail::write_le<std::uint32_t>(out, 0);   // no shift
  for (int id : mem.class_ids()) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(id));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(mem.count(id)));
    for (double v : mem.mean(id)) detail::write_f64(out, v);
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

ActivationMemory load_activation_memory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  auto bad = [&](const std::string& why) {
    return Error(ErrorCode::FormatVersionMismatch, path.string() + ": " + why);
  };
  if (!detail::read_magic(in, kActivationMagic)) throw bad("bad magic");
  std::uint32_t version = 0, n = 0, d_a = 0, bits = 0, shift = 0;
  if (!detail::read_le(in, version) || version != kActivationVersion) throw bad("unsupported version");
  if (!detail::read_le(in, n) || !detail::read_le(in, d_a) || !detail::read_le(in, bits) ||
      !detail::read_le(in, shift) || bits != 64) {
    throw bad("bad header");
  }
  ActivationMemory mem(d_a);
  for (std::uint32_t c = 0; c < n; ++c) {
    std::uint32_t id = 0, count = 0;
    if (!detail::read_le(in, id) || !detail::read_le(in, count)) throw bad("truncated record");
    Vector v(d_a);
    for (auto& x : v)
      if (!detail::read_f64(in, x)) throw bad("truncated payload");
    mem.insert(static_cast<int>(id), std::move(v), count);
  }
  return mem;
}

void learn_class(ExplicitMemory& em, ActivationMemory& act_mem, const ModelParams& params,
                 std::span<const Vector> samples, int class_id) {
  if (samples.empty()) {
    throw Error(ErrorCode::EmptySampleSet, "no samples for class " + std::to_string(class_id));
  }
  if (em.contains(class_id) || act_mem.contains(class_id)) {
    throw Error(ErrorCode::DuplicateClass, "class " + std::to_string(class_id) + " already learned");
  }
  if (static_cast<std::int64_t>(samples.size()) > em.quant().max_shots) {
    throw Error(ErrorCode::InvalidArgument, std::to_string(samples.size()) + " shots exceed max_shots " +
                                                std::to_string(em.quant().max_shots));
  }
  if (params.d_p() != em.d_p() || params.d_a() != act_mem.d_a()) {
    throw Error(ErrorCode::ShapeMismatch, "model dims do not match the memories");
  }

  IntVector accum(em.d_p(), 0);
  Vector act_sum(act_mem.d_a(), 0.0);
  for (const auto& x : samples) {
    const Vector theta_a = forward_backbone(params, x);
    const Vector theta_p = forward_fcr(params, theta_a);
    accumulate(accum, quantize_feature(theta_p, em.quant().feature_bits).values,
               em.quant().accum_bits);
    for (std::size_t i = 0; i < act_sum.size(); ++i) act_sum[i] += theta_a[i];
  }
  const auto count = static_cast<std::int64_t>(samples.size());
  for (auto& v : act_sum) v /= static_cast<double>(count);

  Prototype proto = em.make_prototype(class_id, std::move(accum), count);
  em.insert(std::move(proto));
  act_mem.insert(class_id, std::move(act_sum), count);
}

void FinetuneConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "finetune epochs must be positive");
  if (sub_batch < 1) throw Error(ErrorCode::InvalidArgument, "finetune sub_batch must be positive");
  if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidArgument, "finetune lr must be >= 0");
}

std::vector<std::vector<std::size_t>> subbatch_plan(std::size_t num_classes, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "sub-batch size must be positive");
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t start = 0; start < num_classes; start += n) {
    std::vector<std::size_t> g;
    for (std::size_t i = start; i < std::min(num_classes, start + n); ++i) g.push_back(i);
    groups.push_back(std::move(g));
  }
  return groups;
}

std::vector<FinetunePair> finetune_pairs(const ActivationMemory& act_mem, const ExplicitMemory& em) {
  const auto ids = act_mem.class_ids();
  if (ids != em.class_ids()) {
    throw Error(ErrorCode::MisalignedMemories, "activation memory holds " +
                                                   std::to_string(ids.size()) + " classes, EM " +
                                                   std::to_string(em.size()));
  }
  std::vector<FinetunePair> pairs;
  pairs.reserve(ids.size());
  for (int id : ids) {
    const auto& proto = em.at(id);
    Vector target(proto.accum.size());
    const IntVector signs = bipolarize(proto.accum);
    for (std::size_t i = 0; i < signs.size(); ++i) target[i] = static_cast<double>(signs[i]);
    pairs.push_back({act_mem.mean(id), std::move(target)});
  }
  return pairs;
}

double finetune_objective(const ModelParams& params, std::span<const FinetunePair> pairs,
                          GradientTape* tape) {
  double loss = 0.0;
  ForwardRecord record;
  for (const auto& pair : pairs) {
    const Vector out = forward_fcr(params, pair.theta_a, tape ? &record : nullptr);
    loss += 1.0 - cossim(out, pair.target);
    if (tape != nullptr) {
      Vector g = cossim_grad(out, pair.target);
      for (auto& v : g) v = -v;
      backward(params, record, g, *tape, BackwardScope::FcrOnly);
    }
  }
  return loss;
}

FinetuneHistory finetune_fcr(ModelParams& params, const ActivationMemory& act_mem,
                             const ExplicitMemory& em, const FinetuneConfig& cfg) {
  cfg.validate();
  const auto pairs = finetune_pairs(act_mem, em);
  FinetuneHistory history;
  if (pairs.empty()) return history;

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  const auto plan = subbatch_plan(pairs.size(), cfg.sub_batch);
  GradientTape tape = GradientTape::zeros_like(params);
  std::vector<FinetunePair> group;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    history.epoch_loss.push_back(finetune_objective(params, pairs));
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    for (const auto& indices : plan) {
      group.clear();
      for (std::size_t i : indices) group.push_back(pairs[order[i]]);
      tape.zero();
      finetune_objective(params, group, &tape);
      sgd_step(params, tape, cfg.lr);
      ++history.updates;
    }
  }
  return history;
}

}  // namespace ofscil
