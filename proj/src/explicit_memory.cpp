#include "ofscil/explicit_memory.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <string>

#include "binary_io.hpp"

namespace ofscil {

namespace {

constexpr std::string_view kMemoryMagic = "OFEM";
constexpr std::uint32_t kMemoryVersion = 1;
constexpr std::uint32_t kAutoShift = 0xFFFFFFFFu;

int ceil_log2(std::int64_t n) {
  int b = 0;
  while ((std::int64_t{1} << b) < n) ++b;
  return b;
}

std::int64_t max_abs(std::span<const std::int64_t> v) {
  std::int64_t m = 0;
  for (auto x : v) m = std::max(m, x < 0 ? -x : x);
  return m;
}

}  // namespace

void QuantSpec::validate() const {
  auto fail = [](const std::string& why) { return Error(ErrorCode::InvalidArgument, why); };
  if (feature_bits < 2 || feature_bits > 16) throw fail("feature_bits must lie in [2, 16]");
  if (accum_bits < feature_bits || accum_bits > 62) {
    throw fail("accum_bits must lie in [feature_bits, 62]");
  }
  if (prototype_bits < 1 || prototype_bits > accum_bits) {
    throw fail("prototype_bits must lie in [1, accum_bits]");
  }
  if (right_shift && (*right_shift < 0 || *right_shift >= accum_bits)) {
    throw fail("right_shift must lie in [0, accum_bits)");
  }
  if (max_shots < 1) throw fail("max_shots must be positive");
  if (accum_bits < feature_bits + ceil_log2(max_shots)) {
    throw fail("accum_bits " + std::to_string(accum_bits) + " cannot hold " +
               std::to_string(max_shots) + " shots of " + std::to_string(feature_bits) +
               "-bit features");
  }
}

std::int64_t signed_max(int bits) { return (std::int64_t{1} << (bits - 1)) - 1; }
std::int64_t signed_min(int bits) { return -(std::int64_t{1} << (bits - 1)); }

QuantizedFeature quantize_feature(std::span<const double> theta_p, int bits) {
  if (bits < 2 || bits > 32) throw Error(ErrorCode::InvalidArgument, "feature bits out of range");
  if (!all_finite(theta_p)) throw Error(ErrorCode::NumericFailure, "non-finite feature");
  QuantizedFeature q;
  q.values.assign(theta_p.size(), 0);
  double peak = 0.0;
  for (double v : theta_p) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) {
    q.degenerate = true;
    return q;
  }
  const auto hi = signed_max(bits);
  const auto lo = signed_min(bits);
  q.scale = peak / static_cast<double>(hi);
  for (std::size_t i = 0; i < theta_p.size(); ++i) {
    const auto r = static_cast<std::int64_t>(std::llround(theta_p[i] / q.scale));
    q.values[i] = std::clamp(r, lo, hi);
  }
  return q;
}

Vector dequantize(const QuantizedFeature& q) {
  Vector v(q.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(q.values[i]) * q.scale;
  return v;
}

void accumulate(IntVector& accum, const IntVector& q, int accum_bits) {
  if (accum.size() != q.size()) throw Error(ErrorCode::ShapeMismatch, "accumulate: size");
  const auto hi = signed_max(accum_bits);
  const auto lo = signed_min(accum_bits);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const std::int64_t s = accum[i] + q[i];
    if (s > hi || s < lo) {
      throw Error(ErrorCode::NumericFailure,
                  "accumulator overflow at entry " + std::to_string(i) + " (" +
                      std::to_string(accum_bits) + "-bit)");
    }
    accum[i] = s;
  }
}

Vector Prototype::dequantized() const {
  Vector v(quantized.size());
  const auto n = static_cast<double>(std::max<std::int64_t>(count, 1));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::ldexp(static_cast<double>(quantized[i]), scale_shift) / n;
  return v;
}

Vector Prototype::mean() const {
  Vector v(accum.size());
  const auto n = static_cast<double>(std::max<std::int64_t>(count, 1));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(accum[i]) / n;
  return v;
}

int choose_shift(const Prototype& proto, int target_bits) {
  const std::int64_t m = max_abs(proto.accum);
  const std::int64_t limit = std::int64_t{1} << (target_bits - 1);
  int shift = 0;
  while ((m >> shift) >= limit) ++shift;
  return shift;
}

IntVector bipolarize(std::span<const std::int64_t> x) {
  IntVector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] < 0 ? -1 : 1;
  return out;
}

Vector bipolarize(std::span<const double> x) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] < 0.0 ? -1.0 : 1.0;
  return out;
}

Prototype reduce_precision(const Prototype& proto, int target_bits, int shift) {
  if (target_bits < 1 || target_bits > 62) {
    throw Error(ErrorCode::InvalidArgument, "target bits out of range");
  }
  if (shift < 0 || shift > 62) throw Error(ErrorCode::InvalidArgument, "shift out of range");
  Prototype out = proto;
  out.bits = target_bits;
  if (target_bits == 1) {
    out.quantized = bipolarize(proto.accum);
    out.scale_shift = 0;
    return out;
  }
  const auto hi = signed_max(target_bits);
  const auto lo = signed_min(target_bits);
  out.quantized.resize(proto.accum.size());
  for (std::size_t i = 0; i < proto.accum.size(); ++i) {
    const std::int64_t v = proto.accum[i] >> shift;
    if (v > hi || v < lo) {
      throw Error(ErrorCode::OverflowAfterShift,
                  "class " + std::to_string(proto.class_id) + ": entry " + std::to_string(i) +
                      " needs more than " + std::to_string(target_bits) + " bits after >> " +
                      std::to_string(shift));
    }
    out.quantized[i] = v;
  }
  out.scale_shift = shift;
  return out;
}

ExplicitMemory::ExplicitMemory(std::size_t d_p, QuantSpec quant) : d_p_(d_p), quant_(quant) {
  quant_.validate();
  if (d_p_ == 0) throw Error(ErrorCode::InvalidArgument, "d_p must be positive");
}

Prototype ExplicitMemory::make_prototype(int class_id, IntVector accum, std::int64_t count) const {
  Prototype p;
  p.class_id = class_id;
  p.accum = std::move(accum);
  p.count = count;
  if (quant_.full_precision()) {
    p.quantized = p.accum;
    p.bits = quant_.accum_bits;
    p.scale_shift = 0;
    return p;
  }
  const int shift = quant_.right_shift ? *quant_.right_shift
                                       : choose_shift(p, quant_.prototype_bits);
  return reduce_precision(p, quant_.prototype_bits, shift);
}

void ExplicitMemory::insert(Prototype proto) {
  if (proto.accum.size() != d_p_ || proto.quantized.size() != d_p_) {
    throw Error(ErrorCode::ShapeMismatch, "prototype dimension " +
                                              std::to_string(proto.accum.size()) + " != d_p " +
                                              std::to_string(d_p_));
  }
  if (proto.count < 1) throw Error(ErrorCode::InvalidArgument, "prototype without shots");
  if (contains(proto.class_id)) {
    throw Error(ErrorCode::DuplicateClass, "class " + std::to_string(proto.class_id));
  }
  const int id = proto.class_id;
  prototypes_.emplace(id, std::move(proto));
}

void ExplicitMemory::requantize(const QuantSpec& quant) {
  quant.validate();
  quant_ = quant;
  for (auto& [id, proto] : prototypes_) proto = make_prototype(id, proto.accum, proto.count);
}

const Prototype& ExplicitMemory::at(int class_id) const {
  auto it = prototypes_.find(class_id);
  if (it == prototypes_.end()) {
    throw Error(ErrorCode::InvalidArgument, "class " + std::to_string(class_id) + " not in memory");
  }
  return it->second;
}

std::vector<int> ExplicitMemory::class_ids() const {
  std::vector<int> ids;
  ids.reserve(prototypes_.size());
  for (const auto& [id, _] : prototypes_) ids.push_back(id);
  return ids;
}

Classification classify(const ExplicitMemory& em, std::span<const double> theta_p) {
  if (em.empty()) throw Error(ErrorCode::EmptyMemory, "classify on an empty memory");
  if (theta_p.size() != em.d_p()) {
    throw Error(ErrorCode::ShapeMismatch, "query dimension " + std::to_string(theta_p.size()) +
                                              " != d_p " + std::to_string(em.d_p()));
  }
  if (norm(theta_p) < kZeroNormThreshold) throw Error(ErrorCode::ZeroNorm, "zero query");
  Classification out;
  out.class_ids.reserve(em.size());
  out.scores.reserve(em.size());
  double best = 0.0;
  for (const auto& [id, proto] : em.prototypes()) {
    const Vector p = proto.dequantized();
    const double s = norm(p) < kZeroNormThreshold ? 0.0 : cossim(theta_p, p);
    if (out.class_ids.empty() || s > best) {
      best = s;
      out.class_id = id;
    }
    out.class_ids.push_back(id);
    out.scores.push_back(s);
  }
  return out;
}

std::uint64_t prototype_memory_bytes(std::size_t num_classes, std::size_t d_p, int bits) {
  const std::uint64_t total_bits =
      static_cast<std::uint64_t>(num_classes) * d_p * static_cast<std::uint64_t>(bits);
  return (total_bits + 7) / 8;
}

double accuracy(const ExplicitMemory& em, const LabeledFeatures& test) {
  if (test.features.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.features.size(); ++i) {
    if (classify(em, test.features[i]).class_id == test.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.features.size());
}

std::vector<SweepRow> precision_sweep(const ExplicitMemory& em, const LabeledFeatures& test,
                                      std::span<const int> bits) {
  std::vector<SweepRow> rows;
  for (int b : bits) {
    QuantSpec q = em.quant();
    q.prototype_bits = std::min(b, q.accum_bits);
    q.right_shift.reset();
    ExplicitMemory copy = em;
    copy.requantize(q);
    rows.push_back({b, prototype_memory_bytes(em.size(), em.d_p(), b), accuracy(copy, test)});
  }
  return rows;
}

void save_memory(const ExplicitMemory& em, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const int bits = em.quant().full_precision() ? em.quant().accum_bits : em.quant().prototype_bits;
  const std::size_t width = static_cast<std::size_t>((bits + 7) / 8);
  detail::write_magic(out, kMemoryMagic);
  detail::write_le<std::uint32_t>(out, kMemoryVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(em.size()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(em.d_p()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(bits));
  detail::write_le<std::uint32_t>(
      out, em.quant().right_shift ? static_cast<std::uint32_t>(*em.quant().right_shift) : kAutoShift);
  for (const auto& [id, proto] : em.prototypes()) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(id));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(proto.count));
    for (auto v : proto.quantized) detail::write_signed(out, v, width);
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

ExplicitMemory load_memory(const std::filesystem::path& path, const QuantSpec& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  auto bad = [&](const std::string& why) {
    return Error(ErrorCode::FormatVersionMismatch, path.string() + ": " + why);
  };
  if (!detail::read_magic(in, kMemoryMagic)) throw bad("bad magic");
  std::uint32_t version = 0, n = 0, d_p = 0, bits = 0, shift = 0;
  if (!detail::read_le(in, version) || version != kMemoryVersion) throw bad("unsupported version");
  if (!detail::read_le(in, n) || !detail::read_le(in, d_p) || !detail::read_le(in, bits) ||
      !detail::read_le(in, shift)) {
    throw bad("truncated header");
  }
  QuantSpec quant = base;
  quant.prototype_bits = static_cast<int>(bits);
  if (quant.accum_bits < quant.prototype_bits) quant.accum_bits = quant.prototype_bits;
  if (shift == kAutoShift) {
    quant.right_shift.reset();
  } else {
    quant.right_shift = static_cast<int>(shift);
  }
  ExplicitMemory em(d_p, quant);
  const std::size_t width = (bits + 7) / 8;
  for (std::uint32_t c = 0; c < n; ++c) {
    std::uint32_t id = 0, count = 0;
    if (!detail::read_le(in, id) || !detail::read_le(in, count)) throw bad("truncated record");
    Prototype p;
    p.class_id = static_cast<int>(id);
    p.count = count;
    p.bits = static_cast<int>(bits);
    p.scale_shift = quant.right_shift.value_or(0);
    p.quantized.resize(d_p);
    for (auto& v : p.quantized)
      if (!detail::read_signed(in, v, width)) throw bad("truncated payload");
    // The accumulator is not stored; rebuild it up to the shifted-out bits.
    p.accum.resize(d_p);
    for (std::size_t i = 0; i < d_p; ++i) p.accum[i] = p.quantized[i] * (std::int64_t{1} << p.scale_shift);
    em.insert(std::move(p));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw bad("trailing bytes");
  return em;
}

}  // namespace ofscil
