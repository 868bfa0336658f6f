#include "ofscil/synthetic.hpp"

#include <cmath>
#include <random>

namespace ofscil {

namespace {

struct Blob {
  double cy, cx, sigma, amplitude;
  std::size_t channel;
};

}  // namespace

LabeledDataset make_synthetic_dataset(const SyntheticConfig& cfg) {
  const GridShape g = cfg.grid;
  if (g.size() == 0 || cfg.num_classes == 0) {
    throw Error(ErrorCode::InvalidArgument, "synthetic dataset needs a non-empty grid and classes");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> center_y(2.0, static_cast<double>(g.height) - 3.0);
  std::uniform_real_distribution<double> center_x(2.0, static_cast<double>(g.width) - 3.0);
  std::uniform_real_distribution<double> sigma(1.0, 2.5);
  std::uniform_real_distribution<double> amplitude(0.5, 1.0);
  std::uniform_int_distribution<std::size_t> channel(0, g.channels - 1);

  std::vector<std::vector<Blob>> templates(cfg.num_classes);
  for (auto& blobs : templates) {
    for (std::size_t b = 0; b < cfg.blobs_per_class; ++b) {
      blobs.push_back({center_y(rng), center_x(rng), sigma(rng), amplitude(rng), channel(rng)});
    }
  }

  std::normal_distribution<double> jitter(0.0, cfg.center_jitter);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  std::uniform_int_distribution<int> shift(-cfg.max_shift, cfg.max_shift);
  std::uniform_real_distribution<double> gain(1.0 - cfg.amplitude_jitter, 1.0 + cfg.amplitude_jitter);

  LabeledDataset ds;
  ds.input_dim = g.size();
  const std::size_t plane = g.height * g.width;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      Vector x(g.size(), 0.0);
      const double dy = shift(rng);
      const double dx = shift(rng);
      const double scale = gain(rng);
      for (const auto& blob : templates[c]) {
        const double cy = blob.cy + dy + jitter(rng);
        const double cx = blob.cx + dx + jitter(rng);
        const double inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
        for (std::size_t r = 0; r < g.height; ++r) {
          for (std::size_t k = 0; k < g.width; ++k) {
            const double d2 = (r - cy) * (r - cy) + (k - cx) * (k - cx);
            x[blob.channel * plane + r * g.width + k] += scale * blob.amplitude * std::exp(-d2 * inv);
          }
        }
      }
      for (auto& v : x) v += noise(rng);
      ds.samples.push_back({std::move(x), static_cast<int>(c)});
    }
  }
  return ds;
}

}  // namespace ofscil
