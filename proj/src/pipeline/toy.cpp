#include "cflow/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cflow/errors.hpp"
#include "cflow/random.hpp"

namespace cflow {

namespace {

constexpr std::size_t kMinPerClass = 10;
constexpr std::size_t kMinSide = 8;

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

DatasetFile make_split(const ToyParams& p, const std::vector<std::size_t>& counts, const char* name,
                       std::uint64_t split_seed) {
  std::vector<int> labels;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    labels.insert(labels.end(), counts[k], static_cast<int>(k));
  }
  Rng order(split_seed);
  order.shuffle(labels);

  const std::size_t dim = p.side * p.side;
  std::vector<double> pixels;
  pixels.reserve(labels.size() * dim);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto img = render_toy_image(p.side, labels[i], p.intensity, p.noise, Rng::derive(split_seed, i + 1));
    pixels.insert(pixels.end(), img.begin(), img.end());
  }
  DatasetFile f;
  f.data.num_classes = counts.size();
  f.data.labels = std::move(labels);
  f.data.samples = Tensor(Shape{f.data.labels.size(), dim}, std::move(pixels));
  f.manifest = describe(f.data, name, p.side, p.seed);
  f.manifest.train_count = p.train_counts[0] + p.train_counts[1];
  f.manifest.val_count = p.val_counts[0] + p.val_counts[1];
  f.manifest.test_count = p.test_counts[0] + p.test_counts[1];
  f.manifest.source = {{"generator", "toy"}, {"params", p.to_json()}};
  return f;
}

}  // namespace

void ToyParams::validate() const {
  if (side < kMinSide) {
    throw ContractError("toy images need side >= " + std::to_string(kMinSide));
  }
  for (const auto* counts : {&train_counts, &val_counts, &test_counts}) {
    if (counts->size() != 2) {
      throw ContractError("toy data has exactly two classes");
    }
    for (std::size_t c : *counts) {
      if (c < kMinPerClass) {
        throw ContractError("toy data needs at least " + std::to_string(kMinPerClass) + " samples per class per split");
      }
    }
  }
  if (!(intensity >= 0.0) || !std::isfinite(intensity) || !(noise >= 0.0) || !std::isfinite(noise)) {
    throw ContractError("toy intensity and noise must be finite and non-negative");
  }
}

nlohmann::json ToyParams::to_json() const {
  return {{"side", side},           {"train_counts", train_counts}, {"val_counts", val_counts},
          {"test_counts", test_counts}, {"intensity", intensity},       {"noise", noise},
          {"seed", seed}};
}

std::vector<double> render_toy_image(std::size_t side, int label, double intensity, double noise, std::uint64_t seed) {
  Rng rng(seed);
  const double s = static_cast<double>(side);
  const double body = rng.uniform(0.55, 0.75);
  const double field = rng.uniform(0.12, 0.25);
  const double cx = 0.5 * (s - 1.0) + rng.uniform(-0.1, 0.1) * s;
  const double cy = 0.5 * (s - 1.0) + rng.uniform(-0.1, 0.1) * s;
  const double rx = rng.uniform(0.28, 0.38) * s;
  const double ry = rng.uniform(0.30, 0.42) * s;
  const double edge = 0.12;

  // Merged "other findings" within class 0: a diffuse vertical haze.
  const double haze = label == 0 && rng.uniform() < 0.5 ? rng.uniform(0.0, 0.12) : 0.0;

  struct Blob {
    double x, y, sigma, amp;
  };
  std::vector<Blob> blobs;
  if (label == 1) {
    const auto count = 1 + rng.below(3);
    for (std::uint64_t b = 0; b < count; ++b) {
      const double r = 0.65 * std::sqrt(rng.uniform());
      const double theta = 2.0 * std::numbers::pi * rng.uniform();
      blobs.push_back({cx + r * rx * std::cos(theta), cy + r * ry * std::sin(theta), rng.uniform(0.10, 0.16) * s,
                       intensity * rng.uniform(0.2, 0.5)});
    }
  }

  std::vector<double> img(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double dx = (static_cast<double>(x) - cx) / rx;
      const double dy = (static_cast<double>(y) - cy) / ry;
      const double inside = logistic((1.0 - std::sqrt(dx * dx + dy * dy)) / edge);
      double v = body + (field - body) * inside;
      v += haze * inside * (static_cast<double>(y) / s);
      for (const Blob& b : blobs) {
        const double ex = static_cast<double>(x) - b.x;
        const double ey = static_cast<double>(y) - b.y;
        v += b.amp * inside * std::exp(-(ex * ex + ey * ey) / (2.0 * b.sigma * b.sigma));
      }
      v += noise * rng.normal();
      img[y * side + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

ToySplits synth_toy_dataset(const ToyParams& params) {
  params.validate();
  return {make_split(params, params.train_counts, "train", Rng::derive(params.seed, 1)),
          make_split(params, params.val_counts, "val", Rng::derive(params.seed, 2)),
          make_split(params, params.test_counts, "test", Rng::derive(params.seed, 3))};
}

}  // namespace cflow
