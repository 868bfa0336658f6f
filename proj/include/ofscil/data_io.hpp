#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <vector>

#include "ofscil/numerics.hpp"

namespace ofscil {

struct Sample {
  Vector input;
  int label = 0;
  bool operator==(const Sample&) const = default;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  std::size_t input_dim = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::set<int> classes() const;
  std::vector<Vector> inputs_of(int label) const;
  LabeledDataset filter(const std::set<int>& labels) const;
  void add(Vector input, int label);
};

enum class DatasetFormat { Auto, RawBinary, Csv };
enum class SampleDtype : std::uint8_t { F32 = 0, F64 = 1, U8Image = 2 };

// "OFDS" raw binary or "label,f0,f1,..." csv. Auto picks by magic bytes.
LabeledDataset load_dataset(const std::filesystem::path& path, DatasetFormat format = DatasetFormat::Auto);
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path,
                  DatasetFormat format = DatasetFormat::RawBinary, SampleDtype dtype = SampleDtype::F64);

// CIFAR-100 binary batch: per record coarse u8, fine u8, 3072 pixel bytes.
// Fine labels are kept and pixels scaled to [0, 1].
inline constexpr std::size_t kCifarRecordBytes = 3074;
LabeledDataset load_cifar_batch(const std::filesystem::path& path);

// Base session, T incremental N-way S-shot sessions, and a test set over all of them.
struct SessionStream {
  LabeledDataset base;
  std::vector<LabeledDataset> sessions;
  std::size_t ways = 0;
  std::size_t shots = 0;
  LabeledDataset test;

  // Source-dataset indices of each part; filled by split_fscil.
  std::vector<std::size_t> base_indices;
  std::vector<std::vector<std::size_t>> session_indices;
  std::vector<std::size_t> test_indices;

  std::set<int> classes_up_to(std::size_t session) const;
};

struct SplitConfig {
  std::size_t base_classes = 10;
  std::size_t num_sessions = 4;
  std::size_t ways = 2;
  std::size_t shots = 5;
  std::size_t per_class_cap = 50;  // cap on base-session training samples per class
  std::size_t test_per_class = 20;
  std::uint64_t seed = 0;
};

// Classes sorted by id: base takes the first base_classes, each session the
// next `ways`. Samples within a class are drawn by a seeded shuffle.
SessionStream split_fscil(const LabeledDataset& ds, const SplitConfig& cfg);

// Manifest: key=value lines (base, session (repeated, in order), test, ways,
// shots, optional format). Relative paths resolve against the manifest directory.
SessionStream load_stream_manifest(const std::filesystem::path& path);
// Writes base/session/test datasets next to the manifest.
void save_stream(const SessionStream& stream, const std::filesystem::path& manifest_path);

}  // namespace ofscil
