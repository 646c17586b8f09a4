#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cflow/dataset.hpp"

namespace cflow {

// Procedural two-class stand-in for chest CT slices. Every image shows a
// dark elliptical field on a brighter body with jittered position, size and
// contrast. Class 1 adds one to three soft bright blobs inside the field.
struct ToyParams {
  std::size_t side = 16;
  // Per-class sample counts for each split.
  std::vector<std::size_t> train_counts{1000, 1000};
  std::vector<std::size_t> val_counts{250, 250};
  std::vector<std::size_t> test_counts{250, 250};
  double intensity = 1.0;  // blob amplitude scale; 0 makes the classes identical
  double noise = 0.04;     // pixel noise standard deviation
  std::uint64_t seed = 0;

  // Throws ContractError.
  void validate() const;
  nlohmann::json to_json() const;
};

struct ToySplits {
  DatasetFile train;
  DatasetFile val;
  DatasetFile test;
};

ToySplits synth_toy_dataset(const ToyParams& params);

// Renders one image; exposed for tests.
std::vector<double> render_toy_image(std::size_t side, int label, double intensity, double noise, std::uint64_t seed);

}  // namespace cflow
