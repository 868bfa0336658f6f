#pragma once

// On-device learning: single-pass prototype extension of the explicit memory
// and optional finetuning of the FCR against bipolarized prototypes, with the
// backbone frozen throughout.

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "ofscil/backbone.hpp"
#include "ofscil/explicit_memory.hpp"

namespace ofscil {

// Per-class average backbone activation theta_a.
class ActivationMemory {
 public:
  ActivationMemory() = default;
  explicit ActivationMemory(std::size_t d_a) : d_a_(d_a) {}

  void insert(int class_id, Vector mean, std::int64_t count);
  bool contains(int class_id) const { return means_.count(class_id) != 0; }
  const Vector& mean(int class_id) const;
  std::int64_t count(int class_id) const { return counts_.at(class_id); }
  std::size_t size() const { return means_.size(); }
  std::size_t d_a() const { return d_a_; }
  std::vector<int> class_ids() const;

 private:
  std::size_t d_a_ = 0;
  std::map<int, Vector> means_;
  std::map<int, std::int64_t> counts_;
};

// "OFAM" snapshot; same container layout as the EM snapshot with f64 payload.
void save_activation_memory(const ActivationMemory& mem, const std::filesystem::path& path);
ActivationMemory load_activation_memory(const std::filesystem::path& path);

// One forward pass per sample; backbone and FCR are read only.
// Throws DuplicateClass, EmptySampleSet, or InvalidArgument if the shot count
// exceeds the memory's max_shots.
void learn_class(ExplicitMemory& em, ActivationMemory& act_mem, const ModelParams& params,
                 std::span<const Vector> samples, int class_id);

struct FinetuneConfig {
  int epochs = 100;
  std::size_t sub_batch = 10;
  double lr = 0.01;
  bool shuffle = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Consecutive chunks of at most n over [0, num_classes).
std::vector<std::vector<std::size_t>> subbatch_plan(std::size_t num_classes, std::size_t n);

struct FinetunePair {
  Vector theta_a;
  Vector target;  // bipolarized prototype
};

// Pairs in ascending class-id order. Throws MisalignedMemories when the two
// memories do not hold the same classes.
std::vector<FinetunePair> finetune_pairs(const ActivationMemory& act_mem, const ExplicitMemory& em);

// Sum over pairs of 1 - cossim(FCR(theta_a), target). When `tape` is given the
// FCR gradient is accumulated into it.
double finetune_objective(const ModelParams& params, std::span<const FinetunePair> pairs,
                          GradientTape* tape = nullptr);

struct FinetuneHistory {
  std::vector<double> epoch_loss;  // objective summed over all classes, before each epoch's updates
  std::size_t updates = 0;
};

// Updates only the FCR layer. EM prototypes and backbone are left untouched.
FinetuneHistory finetune_fcr(ModelParams& params, const ActivationMemory& act_mem,
                             const ExplicitMemory& em, const FinetuneConfig& cfg);

}  // namespace ofscil
