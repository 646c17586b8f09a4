#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "cflow/autodiff.hpp"
#include "cflow/binary_io.hpp"
#include "cflow/classifier.hpp"
#include "cflow/dataset.hpp"
#include "cflow/nn.hpp"

namespace cflow {

struct FlowConfig {
  std::size_t data_dim = 256;
  std::size_t cond_dim = 32;
  // Each block is a fixed permutation followed by two couplings that
  // transform complementary halves.
  std::size_t blocks = 4;
  std::size_t hidden = 64;
  std::size_t hidden_layers = 1;
  double log_scale_bound = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static FlowConfig from_json(const nlohmann::json& j);
};

// y[pass] = x[pass]
// y[transform] = exp(ls) * x[transform] + shift
// with ls = bound * tanh(s(x[pass], z) / bound) and shift = b(x[pass], z).
class CouplingLayer {
 public:
  CouplingLayer(std::vector<std::size_t> pass, std::vector<std::size_t> transform, std::size_t cond_dim,
                const std::vector<std::size_t>& hidden, double log_scale_bound, Rng& rng);

  const std::vector<std::size_t>& pass() const noexcept { return pass_; }
  const std::vector<std::size_t>& transform() const noexcept { return transform_; }
  double log_scale_bound() const noexcept { return bound_; }

  // In-place on rows of x; adds per-row log-determinants to log_det.
  void forward(Tensor& x, const Tensor& z, std::vector<double>& log_det) const;
  void inverse(Tensor& y, const Tensor& z) const;
  Var forward(Tape& tape, const Var& x, const Var& z, Var& log_det, bool trainable);

  Mlp& scale_net() { return scale_net_; }
  Mlp& shift_net() { return shift_net_; }
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

 private:
  // (bounded log-scale, shift) for the given rows, each [rows, |transform|].
  std::pair<Tensor, Tensor> scale_shift(const Tensor& x, const Tensor& z) const;

  std::vector<std::size_t> pass_;
  std::vector<std::size_t> transform_;
  std::vector<std::size_t> unshuffle_;  // position of each data index in [pass, transform]
  double bound_;
  Mlp scale_net_;
  Mlp shift_net_;
};

// y[i] = x[order[i]].
struct Permutation {
  std::vector<std::size_t> order;

  Permutation inverted() const;
};

using FlowStep = std::variant<Permutation, CouplingLayer>;

class FlowModel {
 public:
  // Standard stack: `cfg.blocks` x {seeded permutation, coupling, coupling}
  // with output layers of s and b zero-initialised, so the fresh model is a
  // pure permutation with zero log-determinant.
  explicit FlowModel(const FlowConfig& cfg);
  // Explicit step list, for hand-built flows.
  FlowModel(const FlowConfig& cfg, std::vector<FlowStep> steps);

  const FlowConfig& config() const noexcept { return cfg_; }
  std::size_t data_dim() const noexcept { return cfg_.data_dim; }
  std::size_t cond_dim() const noexcept { return cfg_.cond_dim; }
  bool trained() const noexcept { return trained_; }
  void mark_trained() { trained_ = true; }

  std::vector<FlowStep>& steps() { return steps_; }
  const std::vector<FlowStep>& steps() const { return steps_; }
  std::vector<Tensor*> parameters();

  ModelFile to_file() const;
  static FlowModel from_file(const ModelFile& file);

 private:
  FlowConfig cfg_;
  std::vector<FlowStep> steps_;
  bool trained_ = false;
};

struct FlowForward {
  Tensor noise;                 // [n, D]
  std::vector<double> log_det;  // n
};

// x [n, D] (or a single rank-1 sample), z [n, C] normalised embeddings.
FlowForward forward(const FlowModel& model, const Tensor& x, const Tensor& z);
Tensor inverse(const FlowModel& model, const Tensor& noise, const Tensor& z);

// Differentiable forward; log_det receives a [n] Var.
Var forward(Tape& tape, FlowModel& model, const Var& x, const Var& z, Var& log_det, bool trainable);

// mean_i [ 0.5 |nu_i|^2 + (D/2) log(2 pi) - log_det_i ]
Tensor negative_log_likelihood(const FlowModel& model, const Tensor& batch, const Tensor& z);
Var negative_log_likelihood(Tape& tape, FlowModel& model, const Var& batch, const Var& z, bool trainable);

// Reference optimiser values are the CT-scale ones; desk runs override
// batch_size and epochs.
struct FlowTrainConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 1e-6;
  std::size_t batch_size = 320;
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 10;
  double lr_decay = 0.99;
  std::uint64_t seed = 0;

  void validate() const;
  // Linear warm-up to learning_rate, then exponential decay.
  double rate_at(std::size_t epoch) const;
};

struct FlowTrainLog {
  double initial_nll = 0.0;
  double final_nll = 0.0;
  std::vector<double> epoch_nll;
};

// Fits `model` by maximum likelihood with z taken from the frozen classifier.
// Throws StateError if the classifier is not frozen.
FlowModel train_flow(FlowModel model, const Dataset& data, const ClassifierModel& classifier,
                     const FlowTrainConfig& cfg, FlowTrainLog* log = nullptr);

// nu ~ temperature * N(0, I); x = inverse(nu, z(x_ref)) clamped to [0, 1].
// Temperature scales the standard deviation and must lie in [0, 1.5].
Tensor generate(const FlowModel& model, const ClassifierModel& classifier, const Tensor& x_ref, double temperature,
                std::uint64_t seed);

// per_ref samples for every reference row; each inherits its reference's label.
Dataset generate_batch(const FlowModel& model, const ClassifierModel& classifier, const Dataset& refs,
                       std::size_t per_ref, double temperature, std::uint64_t seed);

}  // namespace cflow
