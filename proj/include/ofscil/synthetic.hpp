#pragma once

// Seeded image-like dataset: each class is a template of Gaussian blobs on an
// H x W grid; samples jitter blob positions, shift, rescale and add noise.

#include <cstdint>

#include "ofscil/data_io.hpp"
#include "ofscil/losses.hpp"

namespace ofscil {

struct SyntheticConfig {
  std::size_t num_classes = 18;
  std::size_t samples_per_class = 70;
  GridShape grid{1, 16, 16};
  std::size_t blobs_per_class = 3;
  double center_jitter = 0.6;
  int max_shift = 1;
  double amplitude_jitter = 0.2;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

LabeledDataset make_synthetic_dataset(const SyntheticConfig& cfg);

}  // namespace ofscil
