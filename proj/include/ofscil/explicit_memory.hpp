#pragma once

// Explicit memory (EM) of integer class prototypes.
//
// A prototype keeps the integer sum of its quantized shot features (`accum`)
// and a reduced-precision copy (`quantized`) obtained by an arithmetic right
// shift. Classification compares a query against the dequantized prototypes by
// cosine similarity, so the common 1/count and 2^shift factors never change a
// decision.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "ofscil/numerics.hpp"

namespace ofscil {

using IntVector = std::vector<std::int64_t>;

struct QuantSpec {
  int feature_bits = 8;
  int accum_bits = 32;
  // 1 selects sign (bipolar) prototypes; >= accum_bits keeps the accumulator as is.
  int prototype_bits = 8;
  // Fixed shift for every prototype; nullopt picks the minimal shift per prototype.
  std::optional<int> right_shift;
  int max_shots = 64;

  void validate() const;
  bool full_precision() const { return prototype_bits >= accum_bits; }
};

struct QuantizedFeature {
  IntVector values;
  double scale = 1.0;
  bool degenerate = false;  // input was all zeros
};

// Symmetric per-vector quantization to signed `bits`.
QuantizedFeature quantize_feature(std::span<const double> theta_p, int bits);
Vector dequantize(const QuantizedFeature& q);

// Signed two's complement range of `bits`.
std::int64_t signed_max(int bits);
std::int64_t signed_min(int bits);

// accum += q, throwing NumericFailure if any entry leaves the signed accum_bits range.
void accumulate(IntVector& accum, const IntVector& q, int accum_bits);

struct Prototype {
  int class_id = 0;
  IntVector accum;
  std::int64_t count = 0;
  IntVector quantized;
  int scale_shift = 0;
  int bits = 0;  // width of `quantized`

  // quantized * 2^scale_shift / count
  Vector dequantized() const;
  // accum / count, no precision loss.
  Vector mean() const;
};

// Minimal shift such that (max|accum| >> shift) fits signed target_bits.
int choose_shift(const Prototype& proto, int target_bits);

// Arithmetic right shift of the accumulator into signed target_bits.
// target_bits == 1 produces the bipolar form and ignores `shift`.
// Throws OverflowAfterShift when the shifted values still do not fit.
Prototype reduce_precision(const Prototype& proto, int target_bits, int shift);

// sign(x) with 0 mapped to +1.
IntVector bipolarize(std::span<const std::int64_t> x);
Vector bipolarize(std::span<const double> x);

class ExplicitMemory {
 public:
  ExplicitMemory() = default;
  ExplicitMemory(std::size_t d_p, QuantSpec quant);

  // Builds the quantized form from accum/count per the memory's QuantSpec.
  Prototype make_prototype(int class_id, IntVector accum, std::int64_t count) const;

  // Throws DuplicateClass or ShapeMismatch.
  void insert(Prototype proto);
  void erase(int class_id) { prototypes_.erase(class_id); }

  // Rebuilds every quantized prototype from its accumulator under `quant`.
  void requantize(const QuantSpec& quant);

  bool contains(int class_id) const { return prototypes_.count(class_id) != 0; }
  const Prototype& at(int class_id) const;
  std::size_t size() const { return prototypes_.size(); }
  bool empty() const { return prototypes_.empty(); }
  std::size_t d_p() const { return d_p_; }
  const QuantSpec& quant() const { return quant_; }
  const std::map<int, Prototype>& prototypes() const { return prototypes_; }
  std::vector<int> class_ids() const;

 private:
  std::size_t d_p_ = 0;
  QuantSpec quant_;
  std::map<int, Prototype> prototypes_;
};

struct Classification {
  int class_id = -1;
  std::vector<int> class_ids;  // ascending; scores[i] belongs to class_ids[i]
  Vector scores;
};

// Cosine against every dequantized prototype; ties go to the smallest class id.
// A prototype that quantized to all zeros scores 0.
Classification classify(const ExplicitMemory& em, std::span<const double> theta_p);

struct LabeledFeatures {
  std::vector<Vector> features;
  std::vector<int> labels;
};

struct SweepRow {
  int bits = 0;
  std::uint64_t memory_bytes = 0;
  double accuracy = 0.0;
};

std::uint64_t prototype_memory_bytes(std::size_t num_classes, std::size_t d_p, int bits);

double accuracy(const ExplicitMemory& em, const LabeledFeatures& test);

// One row per bit width; widths >= accum_bits evaluate the full-precision accumulator.
std::vector<SweepRow> precision_sweep(const ExplicitMemory& em, const LabeledFeatures& test,
                                      std::span<const int> bits);

// "OFEM" snapshot. Only the quantized payload is stored.
void save_memory(const ExplicitMemory& em, const std::filesystem::path& path);
// Fields absent from the file (feature_bits, accum_bits, max_shots) come from `base`.
ExplicitMemory load_memory(const std::filesystem::path& path, const QuantSpec& base = {});

}  // namespace ofscil
