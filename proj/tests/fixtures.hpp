#pragma once

// Small synthetic datasets shared by the unit tests.

#include <algorithm>
#include <cstdint>
#include <numeric>

#include "cflow/classifier.hpp"
#include "cflow/dataset.hpp"
#include "cflow/random.hpp"
#include "gradcheck.hpp"

namespace cflow::testing {

// Two well-separated Gaussian clouds in [0, 1]^dim; class k is centred at
// 0.3 + 0.4 k in every coordinate, so the classes never overlap at this spread.
inline Dataset blobs(std::size_t per_class, std::size_t dim, std::uint64_t seed, double spread = 0.05) {
  Rng rng(seed);
  Dataset d;
  d.samples = Tensor({2 * per_class, dim});
  d.labels.resize(2 * per_class);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    d.labels[i] = label;
    for (std::size_t j = 0; j < dim; ++j) {
      d.samples(i, j) = std::clamp(0.3 + 0.4 * label + spread * rng.normal(), 0.0, 1.0);
    }
  }
  return d;
}

inline ClassifierConfig blob_classifier(std::size_t dim, std::uint64_t seed = 7) {
  ClassifierConfig cfg;
  cfg.input_dim = dim;
  cfg.hidden_dims = {16};
  cfg.embed_dim = 4;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 16;
  cfg.epochs = 20;
  cfg.seed = seed;
  return cfg;
}

// The first n samples.
inline Dataset head(const Dataset& d, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return d.subset(idx);
}

inline double accuracy(const std::vector<int>& truth, const std::vector<int>& pred) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    hit += truth[i] == pred[i];
  }
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace cflow::testing
