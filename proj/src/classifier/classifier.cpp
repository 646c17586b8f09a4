#include "cflow/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cflow/errors.hpp"

namespace cflow {

namespace {

constexpr double kMinEmbeddingNorm = 1e-12;

std::vector<std::size_t> extractor_widths(const ClassifierConfig& cfg) {
  std::vector<std::size_t> widths{cfg.input_dim};
  widths.insert(widths.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  widths.push_back(cfg.embed_dim);
  return widths;
}

void require_trained(const ClassifierModel& model, const char* op) {
  if (!model.trained()) {
    throw StateError(std::string(op) + " needs a trained classifier");
  }
}

Tensor as_batch(const Tensor& x, std::size_t dim) {
  if (x.rank() == 1) {
    return Tensor(Shape{1, x.size()}, x.values());
  }
  if (x.rank() != 2) {
    throw DimensionError("classifier input must be rank 1 or 2, got " + shape_string(x.shape()));
  }
  if (x.cols() != dim) {
    throw DimensionError("classifier expects " + std::to_string(dim) + " inputs, got " + std::to_string(x.cols()));
  }
  return x;
}

}  // namespace

void ClassifierConfig::validate() const {
  if (input_dim == 0 || embed_dim == 0) {
    throw ParameterError("classifier dimensions must be positive");
  }
  if (embed_dim >= input_dim) {
    throw ParameterError("embed_dim (" + std::to_string(embed_dim) + ") must be smaller than input_dim (" +
                         std::to_string(input_dim) + ")");
  }
  if (num_classes < 2) {
    throw ParameterError("num_classes must be at least 2");
  }
  if (std::any_of(hidden_dims.begin(), hidden_dims.end(), [](std::size_t w) { return w == 0; })) {
    throw ParameterError("hidden widths must be positive");
  }
  if (!(learning_rate > 0.0) || !(lr_decay > 0.0) || lr_decay > 1.0 || weight_decay < 0.0) {
    throw ParameterError("learning_rate and lr_decay must be positive (lr_decay <= 1), weight_decay >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ParameterError("beta parameters must lie in [0, 1)");
  }
  if (batch_size == 0 || epochs == 0) {
    throw ParameterError("batch_size and epochs must be at least 1");
  }
}

nlohmann::json ClassifierConfig::to_json() const {
  return {{"input_dim", input_dim},   {"hidden_dims", hidden_dims},   {"embed_dim", embed_dim},
          {"num_classes", num_classes}, {"learning_rate", learning_rate}, {"weight_decay", weight_decay},
          {"beta1", beta1},           {"beta2", beta2},               {"batch_size", batch_size},
          {"epochs", epochs},         {"lr_decay", lr_decay},         {"min_steps", min_steps},
          {"seed", seed}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.min_steps = j.at("min_steps").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

ClassifierModel::ClassifierModel(const ClassifierConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::derive(cfg_.seed, 0));
  extractor_ = Mlp(extractor_widths(cfg_), /*activate_last=*/true, /*zero_last=*/false, rng);
  head_ = Dense::glorot(cfg_.embed_dim, cfg_.num_classes, rng);
}

void ClassifierModel::freeze() {
  for (Tensor* p : parameters()) {
    p->set_requires_grad(false);
  }
  frozen_ = true;
}

Tensor ClassifierModel::features(const Tensor& x) const { return extractor_.eval(as_batch(x, cfg_.input_dim)); }

Tensor ClassifierModel::logits(const Tensor& x) const {
  return kernels::affine(features(x), head_.weight, head_.bias);
}

Tensor ClassifierModel::probabilities(const Tensor& x) const {
  Tensor out = logits(x);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      denom += v;
    }
    for (double& v : row) {
      v /= denom;
    }
  }
  return out;
}

Var ClassifierModel::logits(Tape& tape, const Var& x, bool trainable) {
  if (x.value().rank() != 2 || x.value().cols() != cfg_.input_dim) {
    throw DimensionError("classifier expects [n, " + std::to_string(cfg_.input_dim) + "] input, got " +
                         shape_string(x.shape()));
  }
  const Var z = extractor_.forward(tape, x, trainable);
  return add_bias(matmul(z, bind(tape, head_.weight, trainable)), bind(tape, head_.bias, trainable));
}

double ClassifierModel::loss(const Dataset& data) const {
  Tape tape;
  return softmax_cross_entropy(tape.constant(logits(data.samples)), data.labels).value().item();
}

std::vector<Tensor*> ClassifierModel::parameters() {
  std::vector<Tensor*> out = extractor_.parameters();
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  return out;
}

ModelFile ClassifierModel::to_file() const {
  ModelFile f;
  f.config = {{"kind", "classifier"}, {"config", cfg_.to_json()}, {"trained", trained_}, {"frozen", frozen_}};
  for (const Tensor* p : extractor_.parameters()) {
    f.blocks.push_back(*p);
  }
  f.blocks.push_back(head_.weight);
  f.blocks.push_back(head_.bias);
  for (Tensor& b : f.blocks) {
    b.set_requires_grad(false);
  }
  return f;
}

ClassifierModel ClassifierModel::from_file(const ModelFile& file) {
  if (file.config.value("kind", "") != "classifier") {
    throw ValidationError("model file does not hold a classifier");
  }
  ClassifierConfig cfg;
  try {
    cfg = ClassifierConfig::from_json(file.config.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed classifier config: ") + e.what());
  }
  ClassifierModel model(cfg);
  auto params = model.parameters();
  if (params.size() != file.blocks.size()) {
    throw ValidationError("classifier file has " + std::to_string(file.blocks.size()) + " blocks, expected " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != file.blocks[i].shape()) {
      throw ValidationError("classifier block " + std::to_string(i) + " has shape " +
                            shape_string(file.blocks[i].shape()) + ", expected " + shape_string(params[i]->shape()));
    }
    std::copy(file.blocks[i].data().begin(), file.blocks[i].data().end(), params[i]->data().begin());
  }
  model.trained_ = file.config.value("trained", false);
  if (file.config.value("frozen", false)) {
    model.freeze();
  }
  return model;
}

namespace {

void check_training_data(const Dataset& data, std::size_t num_classes, std::size_t input_dim) {
  if (data.size() == 0) {
    throw TrainingDataError("empty training set");
  }
  if (data.num_classes != num_classes) {
    throw TrainingDataError("dataset has " + std::to_string(data.num_classes) + " classes, classifier expects " +
                            std::to_string(num_classes));
  }
  if (data.dim() != input_dim) {
    throw DimensionError("dataset dimension " + std::to_string(data.dim()) + " does not match input_dim " +
                         std::to_string(input_dim));
  }
  const auto counts = data.class_counts();
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) {
      throw TrainingDataError("class " + std::to_string(k) + " has no training samples");
    }
  }
  require_unit_range(data.samples, "train_classifier");
}

void fit(ClassifierModel& model, const Dataset& data, std::size_t epochs, double lr0, double lr_decay,
         std::uint64_t shuffle_seed, ClassifierTrainLog* log) {
  if (model.frozen()) {
    throw StateError("cannot train a frozen classifier");
  }
  const ClassifierConfig& cfg = model.config();
  check_training_data(data, cfg.num_classes, cfg.input_dim);

  const std::size_t n = data.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_epochs = std::max(epochs, (cfg.min_steps + steps_per_epoch - 1) / steps_per_epoch);

  AdamW opt(model.parameters(), {cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
  Rng rng(shuffle_seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  ClassifierTrainLog local;
  ClassifierTrainLog& out = log ? *log : local;
  out.initial_loss = model.loss(data);
  out.epoch_loss.clear();

  double lr = lr0;
  for (std::size_t epoch = 0; epoch < total_epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    try {
      for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t stop = std::min(n, start + batch);
        const std::span<const std::size_t> idx(order.data() + start, stop - start);
        std::vector<int> labels;
        labels.reserve(idx.size());
        for (std::size_t i : idx) {
          labels.push_back(data.labels[i]);
        }
        Tape tape;
        const Var x = tape.constant(take_rows(data.samples, idx));
        const Var loss = softmax_cross_entropy(model.logits(tape, x, true), labels);
        total += loss.value().item() * static_cast<double>(idx.size());
        opt.zero_grad();
        tape.backward(loss);
        opt.step(lr);
      }
    } catch (const NumericError& e) {
      throw NumericError("classifier training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    out.epoch_loss.push_back(total / static_cast<double>(n));
    lr *= lr_decay;
  }
  opt.zero_grad();
  out.final_loss = model.loss(data);
  model.mark_trained();
}

}  // namespace

ClassifierModel train_classifier(const Dataset& data, const ClassifierConfig& cfg, ClassifierTrainLog* log) {
  ClassifierModel model(cfg);
  fit(model, data, cfg.epochs, cfg.learning_rate, cfg.lr_decay, Rng::derive(cfg.seed, 1), log);
  return model;
}

void continue_training(ClassifierModel& model, const Dataset& data, std::size_t epochs, double lr_decay,
                       std::uint64_t shuffle_seed, ClassifierTrainLog* log) {
  fit(model, data, epochs, model.config().learning_rate, lr_decay, shuffle_seed, log);
}

Tensor extract_embeddings(const ClassifierModel& model, const Tensor& x) {
  require_trained(model, "extract_embedding");
  Tensor z = model.features(x);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    double norm = 0.0;
    for (double v : row) {
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < kMinEmbeddingNorm) {
      throw DegeneracyError("embedding of sample " + std::to_string(r) + " has zero norm");
    }
    for (double& v : row) {
      v /= norm;
    }
  }
  return z;
}

Embedding extract_embedding(const ClassifierModel& model, const Tensor& x) {
  const Tensor z = extract_embeddings(model, x);
  if (z.rows() != 1) {
    throw ContractError("extract_embedding takes a single sample");
  }
  return Embedding{z.values(), std::nullopt};
}

Prediction predict(const ClassifierModel& model, const Tensor& x) {
  require_trained(model, "predict");
  const Tensor p = model.probabilities(x);
  if (p.rows() != 1) {
    throw ContractError("predict takes a single sample; use predict_labels for batches");
  }
  const auto row = p.row(0);
  const auto best = std::max_element(row.begin(), row.end());
  return Prediction{static_cast<int>(best - row.begin()), std::vector<double>(row.begin(), row.end())};
}

std::vector<int> predict_labels(const ClassifierModel& model, const Tensor& x) {
  require_trained(model, "predict");
  const Tensor probs = model.probabilities(x);
  std::vector<int> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace cflow
