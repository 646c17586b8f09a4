#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cflow/autodiff.hpp"
#include "cflow/binary_io.hpp"
#include "cflow/dataset.hpp"
#include "cflow/nn.hpp"

namespace cflow {

// Defaults for the optimiser are the reference CT-scale values; toy runs
// override learning_rate and epochs.
struct ClassifierConfig {
  std::size_t input_dim = 256;
  std::vector<std::size_t> hidden_dims{64};
  std::size_t embed_dim = 32;
  std::size_t num_classes = 2;
  double learning_rate = 1e-5;
  double weight_decay = 1e-7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double lr_decay = 0.99;  // per-epoch multiplicative
  // Lower bound on optimiser steps; tiny labelled sets get extra epochs.
  std::size_t min_steps = 0;
  std::uint64_t seed = 0;

  // Throws ParameterError.
  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

// C(x) = h(g(x)): g is an affine+ELU stack ending in the embedding layer,
// h a single affine layer followed by softmax.
class ClassifierModel {
 public:
  explicit ClassifierModel(const ClassifierConfig& cfg);

  const ClassifierConfig& config() const noexcept { return cfg_; }
  bool trained() const noexcept { return trained_; }
  bool frozen() const noexcept { return frozen_; }
  void mark_trained() { trained_ = true; }
  // Parameters become immutable: further training raises StateError.
  void freeze();

  // Raw g(x), [n, embed_dim]; no normalisation.
  Tensor features(const Tensor& x) const;
  Tensor logits(const Tensor& x) const;
  Tensor probabilities(const Tensor& x) const;
  Var logits(Tape& tape, const Var& x, bool trainable);

  // Mean cross-entropy of `data` under the current parameters.
  double loss(const Dataset& data) const;

  Mlp& extractor() { return extractor_; }
  Dense& head() { return head_; }
  std::vector<Tensor*> parameters();

  ModelFile to_file() const;
  static ClassifierModel from_file(const ModelFile& file);
  std::vector<std::uint8_t> serialize() const { return encode_model(to_file()); }

 private:
  ClassifierConfig cfg_;
  Mlp extractor_;
  Dense head_;
  bool trained_ = false;
  bool frozen_ = false;
};

struct ClassifierTrainLog {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
};

// Minibatch AdamW on softmax cross-entropy with exponential per-epoch
// learning-rate decay. Throws TrainingDataError if a class is absent,
// NumericError (naming the epoch) on divergence.
ClassifierModel train_classifier(const Dataset& data, const ClassifierConfig& cfg, ClassifierTrainLog* log = nullptr);

// Continues training an unfrozen model in place (warm start).
void continue_training(ClassifierModel& model, const Dataset& data, std::size_t epochs, double lr_decay,
                       std::uint64_t shuffle_seed, ClassifierTrainLog* log = nullptr);

struct Embedding {
  std::vector<double> values;
  std::optional<int> source_label;
};

// z = g(x) / |g(x)|_2 for a single sample (rank-1 or [1, dim] tensor).
Embedding extract_embedding(const ClassifierModel& model, const Tensor& x);
// Row-normalised embeddings for a batch, [n, embed_dim].
Tensor extract_embeddings(const ClassifierModel& model, const Tensor& x);

struct Prediction {
  int label = 0;
  std::vector<double> probabilities;
};

// Argmax of C(x); ties go to the lower class index.
Prediction predict(const ClassifierModel& model, const Tensor& x);
std::vector<int> predict_labels(const ClassifierModel& model, const Tensor& x);

}  // namespace cflow
