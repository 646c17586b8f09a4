#include "cflow/condflow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cflow/errors.hpp"

namespace cflow {

namespace {

constexpr double kMinScale = 1e-30;
constexpr double kMaxTemperature = 1.5;
constexpr std::size_t kInverseChunk = 512;

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Tensor as_batch(const Tensor& x, std::size_t dim, const char* what) {
  if (x.rank() == 1 && x.size() == dim) {
    return Tensor(Shape{1, dim}, x.values());
  }
  if (x.rank() != 2 || x.cols() != dim) {
    throw DimensionError(std::string(what) + ": expected [n, " + std::to_string(dim) + "], got " +
                         shape_string(x.shape()));
  }
  return x;
}

// [rows, |pass| + C] conditioning input for the s and b networks.
Tensor conditioner_input(const Tensor& x, const std::vector<std::size_t>& pass, const Tensor& z) {
  const std::size_t rows = x.rows();
  const std::size_t c = z.cols();
  Tensor in(Shape{rows, pass.size() + c});
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = in.row(r);
    for (std::size_t j = 0; j < pass.size(); ++j) {
      dst[j] = x(r, pass[j]);
    }
    const auto zr = z.row(r);
    std::copy(zr.begin(), zr.end(), dst.begin() + static_cast<std::ptrdiff_t>(pass.size()));
  }
  return in;
}

std::vector<std::size_t> halves_widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

void check_condition(const Tensor& z, std::size_t rows, std::size_t cond_dim) {
  if (z.rank() != 2 || z.cols() != cond_dim) {
    throw DimensionError("condition must be [n, " + std::to_string(cond_dim) + "], got " + shape_string(z.shape()));
  }
  if (z.rows() != rows) {
    throw ContractError("batch has " + std::to_string(rows) + " samples but " + std::to_string(z.rows()) +
                        " conditions");
  }
}

void check_indices(const std::vector<std::size_t>& pass, const std::vector<std::size_t>& transform) {
  const std::size_t dim = pass.size() + transform.size();
  if (pass.empty() || transform.empty()) {
    throw ContractError("coupling split index must lie strictly inside (0, D)");
  }
  std::vector<bool> seen(dim, false);
  for (const auto* part : {&pass, &transform}) {
    for (std::size_t i : *part) {
      if (i >= dim || seen[i]) {
        throw ContractError("coupling index sets must partition 0..D-1");
      }
      seen[i] = true;
    }
  }
}

}  // namespace

void FlowConfig::validate() const {
  if (data_dim < 2) {
    throw ParameterError("flow needs data_dim >= 2");
  }
  if (cond_dim == 0 || blocks == 0 || hidden == 0) {
    throw ParameterError("flow cond_dim, blocks and hidden must be positive");
  }
  if (!(log_scale_bound > 0.0)) {
    throw ParameterError("log_scale_bound must be positive");
  }
}

nlohmann::json FlowConfig::to_json() const {
  return {{"data_dim", data_dim}, {"cond_dim", cond_dim},     {"blocks", blocks},
          {"hidden", hidden},     {"hidden_layers", hidden_layers}, {"log_scale_bound", log_scale_bound},
          {"seed", seed}};
}

FlowConfig FlowConfig::from_json(const nlohmann::json& j) {
  FlowConfig c;
  c.data_dim = j.at("data_dim").get<std::size_t>();
  c.cond_dim = j.at("cond_dim").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
  c.log_scale_bound = j.at("log_scale_bound").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

CouplingLayer::CouplingLayer(std::vector<std::size_t> pass, std::vector<std::size_t> transform, std::size_t cond_dim,
                             const std::vector<std::size_t>& hidden, double log_scale_bound, Rng& rng)
    : pass_(std::move(pass)), transform_(std::move(transform)), bound_(log_scale_bound) {
  check_indices(pass_, transform_);
  if (!(bound_ > 0.0)) {
    throw ParameterError("log_scale_bound must be positive");
  }
  unshuffle_.resize(pass_.size() + transform_.size());
  for (std::size_t j = 0; j < pass_.size(); ++j) {
    unshuffle_[pass_[j]] = j;
  }
  for (std::size_t j = 0; j < transform_.size(); ++j) {
    unshuffle_[transform_[j]] = pass_.size() + j;
  }
  const auto widths = halves_widths(pass_.size() + cond_dim, hidden, transform_.size());
  scale_net_ = Mlp(widths, false, /*zero_last=*/true, rng);
  shift_net_ = Mlp(widths, false, /*zero_last=*/true, rng);
}

std::pair<Tensor, Tensor> CouplingLayer::scale_shift(const Tensor& x, const Tensor& z) const {
  const Tensor in = conditioner_input(x, pass_, z);
  Tensor log_scale = scale_net_.eval(in);
  for (double& v : log_scale.data()) {
    v = bound_ * std::tanh(v / bound_);
  }
  return {std::move(log_scale), shift_net_.eval(in)};
}

void CouplingLayer::forward(Tensor& x, const Tensor& z, std::vector<double>& log_det) const {
  const auto [log_scale, shift] = scale_shift(x, z);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double row_det = 0.0;
    for (std::size_t j = 0; j < transform_.size(); ++j) {
      const double ls = log_scale(r, j);
      double& v = x(r, transform_[j]);
      v = std::exp(ls) * v + shift(r, j);
      row_det += ls;
    }
    log_det[r] += row_det;
  }
}

void CouplingLayer::inverse(Tensor& y, const Tensor& z) const {
  const auto [log_scale, shift] = scale_shift(y, z);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t j = 0; j < transform_.size(); ++j) {
      const double s = std::exp(log_scale(r, j));
      if (s < kMinScale) {
        throw NumericError("coupling scale underflow during inverse");
      }
      double& v = y(r, transform_[j]);
      v = (v - shift(r, j)) / s;
    }
  }
}

Var CouplingLayer::forward(Tape& tape, const Var& x, const Var& z, Var& log_det, bool trainable) {
  const Var kept = gather_cols(x, pass_);
  const Var moved = gather_cols(x, transform_);
  const Var in = concat_cols(kept, z);
  const Var log_scale = scale(tanh(scale(scale_net_.forward(tape, in, trainable), 1.0 / bound_)), bound_);
  const Var shift = shift_net_.forward(tape, in, trainable);
  const Var out = exp(log_scale) * moved + shift;
  log_det = log_det + row_sum(log_scale);
  return gather_cols(concat_cols(kept, out), unshuffle_);
}

std::vector<Tensor*> CouplingLayer::parameters() {
  auto out = scale_net_.parameters();
  auto b = shift_net_.parameters();
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<const Tensor*> CouplingLayer::parameters() const {
  auto out = scale_net_.parameters();
  auto b = shift_net_.parameters();
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Permutation Permutation::inverted() const {
  Permutation inv{std::vector<std::size_t>(order.size())};
  for (std::size_t i = 0; i < order.size(); ++i) {
    inv.order[order[i]] = i;
  }
  return inv;
}

namespace {

Tensor permute_cols(const Tensor& x, const std::vector<std::size_t>& order) {
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < order.size(); ++j) {
      out(r, j) = x(r, order[j]);
    }
  }
  return out;
}

void check_permutation(const Permutation& p, std::size_t dim) {
  if (p.order.size() != dim) {
    throw ContractError("permutation size does not match data_dim");
  }
  std::vector<bool> seen(dim, false);
  for (std::size_t i : p.order) {
    if (i >= dim || seen[i]) {
      throw ContractError("permutation is not a bijection of 0..D-1");
    }
    seen[i] = true;
  }
}

std::vector<std::size_t> hidden_widths(const FlowConfig& cfg) {
  return std::vector<std::size_t>(cfg.hidden_layers, cfg.hidden);
}

std::string step_name(std::size_t index, const FlowStep& step) {
  return std::string(std::holds_alternative<CouplingLayer>(step) ? "coupling" : "permutation") + " step " +
         std::to_string(index);
}

}  // namespace

FlowModel::FlowModel(const FlowConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::derive(cfg_.seed, 0));
  const std::size_t dim = cfg_.data_dim;
  const std::size_t split = dim / 2;
  std::vector<std::size_t> lower(split), upper(dim - split);
  std::iota(lower.begin(), lower.end(), 0);
  std::iota(upper.begin(), upper.end(), split);
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    Permutation perm{std::vector<std::size_t>(dim)};
    std::iota(perm.order.begin(), perm.order.end(), 0);
    rng.shuffle(perm.order);
    steps_.emplace_back(std::move(perm));
    steps_.emplace_back(CouplingLayer(lower, upper, cfg_.cond_dim, hidden_widths(cfg_), cfg_.log_scale_bound, rng));
    steps_.emplace_back(CouplingLayer(upper, lower, cfg_.cond_dim, hidden_widths(cfg_), cfg_.log_scale_bound, rng));
  }
}

FlowModel::FlowModel(const FlowConfig& cfg, std::vector<FlowStep> steps) : cfg_(cfg), steps_(std::move(steps)) {
  cfg_.validate();
  for (const FlowStep& step : steps_) {
    if (const auto* p = std::get_if<Permutation>(&step)) {
      check_permutation(*p, cfg_.data_dim);
    } else {
      const auto& c = std::get<CouplingLayer>(step);
      if (c.pass().size() + c.transform().size() != cfg_.data_dim) {
        throw ContractError("coupling layer does not match data_dim");
      }
    }
  }
}

std::vector<Tensor*> FlowModel::parameters() {
  std::vector<Tensor*> out;
  for (FlowStep& step : steps_) {
    if (auto* c = std::get_if<CouplingLayer>(&step)) {
      auto p = c->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
  }
  return out;
}

ModelFile FlowModel::to_file() const {
  ModelFile f;
  nlohmann::json steps = nlohmann::json::array();
  for (const FlowStep& step : steps_) {
    if (const auto* p = std::get_if<Permutation>(&step)) {
      steps.push_back({{"type", "permutation"}, {"order", p->order}});
    } else {
      const auto& c = std::get<CouplingLayer>(step);
      // Both nets share widths; each layer contributes a weight and a bias.
      const auto layers = c.parameters();
      const std::size_t depth = layers.size() / 4;
      std::vector<std::size_t> hidden;
      for (std::size_t i = 0; i + 1 < depth; ++i) {
        hidden.push_back(layers[2 * i]->cols());
      }
      steps.push_back({{"type", "coupling"},
                       {"pass", c.pass()},
                       {"transform", c.transform()},
                       {"hidden", hidden},
                       {"log_scale_bound", c.log_scale_bound()}});
      for (const Tensor* t : layers) {
        Tensor copy = *t;
        copy.set_requires_grad(false);
        f.blocks.push_back(std::move(copy));
      }
    }
  }
  f.config = {{"kind", "flow"}, {"config", cfg_.to_json()}, {"steps", steps}, {"trained", trained_}};
  return f;
}

FlowModel FlowModel::from_file(const ModelFile& file) {
  if (file.config.value("kind", "") != "flow") {
    throw ValidationError("model file does not hold a flow");
  }
  try {
    const FlowConfig cfg = FlowConfig::from_json(file.config.at("config"));
    Rng unused(0);
    std::vector<FlowStep> steps;
    for (const auto& s : file.config.at("steps")) {
      if (s.at("type") == "permutation") {
        steps.emplace_back(Permutation{s.at("order").get<std::vector<std::size_t>>()});
      } else {
        steps.emplace_back(CouplingLayer(s.at("pass").get<std::vector<std::size_t>>(),
                                         s.at("transform").get<std::vector<std::size_t>>(), cfg.cond_dim,
                                         s.at("hidden").get<std::vector<std::size_t>>(),
                                         s.at("log_scale_bound").get<double>(), unused));
      }
    }
    FlowModel model(cfg, std::move(steps));
    auto params = model.parameters();
    if (params.size() != file.blocks.size()) {
      throw ValidationError("flow file has " + std::to_string(file.blocks.size()) + " blocks, expected " +
                            std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->shape() != file.blocks[i].shape()) {
        throw ValidationError("flow block " + std::to_string(i) + " has shape " +
                              shape_string(file.blocks[i].shape()));
      }
      std::copy(file.blocks[i].data().begin(), file.blocks[i].data().end(), params[i]->data().begin());
    }
    model.trained_ = file.config.value("trained", false);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed flow description: ") + e.what());
  }
}

FlowForward forward(const FlowModel& model, const Tensor& x, const Tensor& z) {
  Tensor h = as_batch(x, model.data_dim(), "flow forward");
  const Tensor cond = as_batch(z, model.cond_dim(), "flow condition");
  check_condition(cond, h.rows(), model.cond_dim());
  std::vector<double> log_det(h.rows(), 0.0);
  const auto& steps = model.steps();
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (const auto* p = std::get_if<Permutation>(&steps[k])) {
      h = permute_cols(h, p->order);
    } else {
      std::get<CouplingLayer>(steps[k]).forward(h, cond, log_det);
    }
    try {
      h.check_finite("flow forward");
    } catch (const NumericError&) {
      throw NumericError("non-finite value after " + step_name(k, steps[k]));
    }
  }
  return {std::move(h), std::move(log_det)};
}

Tensor inverse(const FlowModel& model, const Tensor& noise, const Tensor& z) {
  Tensor h = as_batch(noise, model.data_dim(), "flow inverse");
  const Tensor cond = as_batch(z, model.cond_dim(), "flow condition");
  check_condition(cond, h.rows(), model.cond_dim());
  const auto& steps = model.steps();
  for (std::size_t k = steps.size(); k-- > 0;) {
    if (const auto* p = std::get_if<Permutation>(&steps[k])) {
      h = permute_cols(h, p->inverted().order);
    } else {
      std::get<CouplingLayer>(steps[k]).inverse(h, cond);
    }
    try {
      h.check_finite("flow inverse");
    } catch (const NumericError&) {
      throw NumericError("non-finite value in inverse of " + step_name(k, steps[k]));
    }
  }
  return h;
}

Var forward(Tape& tape, FlowModel& model, const Var& x, const Var& z, Var& log_det, bool trainable) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != model.data_dim()) {
    throw DimensionError("flow forward: expected [n, " + std::to_string(model.data_dim()) + "], got " +
                         shape_string(xv.shape()));
  }
  check_condition(z.value(), xv.rows(), model.cond_dim());
  log_det = tape.constant(Tensor(Shape{xv.rows()}));
  Var h = x;
  auto& steps = model.steps();
  for (std::size_t k = 0; k < steps.size(); ++k) {
    try {
      if (auto* p = std::get_if<Permutation>(&steps[k])) {
        h = gather_cols(h, p->order);
      } else {
        h = std::get<CouplingLayer>(steps[k]).forward(tape, h, z, log_det, trainable);
      }
    } catch (const NumericError& e) {
      throw NumericError("non-finite value in " + step_name(k, steps[k]) + ": " + e.what());
    }
  }
  return h;
}

Tensor negative_log_likelihood(const FlowModel& model, const Tensor& batch, const Tensor& z) {
  const Tensor x = as_batch(batch, model.data_dim(), "negative_log_likelihood");
  const Tensor cond = as_batch(z, model.cond_dim(), "negative_log_likelihood");
  if (cond.rows() != x.rows()) {
    throw ContractError("negative_log_likelihood: " + std::to_string(x.rows()) + " samples but " +
                        std::to_string(cond.rows()) + " embeddings");
  }
  const FlowForward f = forward(model, x, cond);
  const double dim = static_cast<double>(model.data_dim());
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sq = 0.0;
    for (double v : f.noise.row(r)) {
      sq += v * v;
    }
    total += 0.5 * sq + dim * kHalfLog2Pi - f.log_det[r];
  }
  return Tensor::scalar(total / static_cast<double>(x.rows()));
}

Var negative_log_likelihood(Tape& tape, FlowModel& model, const Var& batch, const Var& z, bool trainable) {
  if (batch.value().rank() != 2 || z.value().rank() != 2 || batch.value().rows() != z.value().rows()) {
    throw ContractError("negative_log_likelihood: batch and embeddings must pair up row by row");
  }
  Var log_det;
  const Var noise = forward(tape, model, batch, z, log_det, trainable);
  const double dim = static_cast<double>(model.data_dim());
  const Var per_sample = scale(row_sum(noise * noise), 0.5) - log_det;
  return add_scalar(mean(per_sample), dim * kHalfLog2Pi);
}

void FlowTrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !(lr_decay > 0.0) || lr_decay > 1.0 || weight_decay < 0.0) {
    throw ParameterError("flow learning_rate and lr_decay must be positive (lr_decay <= 1), weight_decay >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ParameterError("flow beta parameters must lie in [0, 1)");
  }
  if (batch_size == 0 || epochs == 0) {
    throw ParameterError("flow batch_size and epochs must be at least 1");
  }
}

double FlowTrainConfig::rate_at(std::size_t epoch) const {
  if (epoch < warmup_epochs) {
    return learning_rate * static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
  }
  return learning_rate * std::pow(lr_decay, static_cast<double>(epoch - warmup_epochs));
}

FlowModel train_flow(FlowModel model, const Dataset& data, const ClassifierModel& classifier,
                     const FlowTrainConfig& cfg, FlowTrainLog* log) {
  cfg.validate();
  if (!classifier.trained() || !classifier.frozen()) {
    throw StateError("train_flow needs a trained, frozen classifier");
  }
  if (data.size() == 0) {
    throw ContractError("train_flow needs a non-empty dataset");
  }
  if (data.dim() != model.data_dim()) {
    throw DimensionError("flow data_dim " + std::to_string(model.data_dim()) + " vs dataset dimension " +
                         std::to_string(data.dim()));
  }
  if (classifier.config().embed_dim != model.cond_dim()) {
    throw DimensionError("flow cond_dim does not match classifier embed_dim");
  }
  const Tensor cond = extract_embeddings(classifier, data.samples);

  FlowTrainLog local;
  FlowTrainLog& out = log ? *log : local;
  out.initial_nll = negative_log_likelihood(model, data.samples, cond).item();
  out.epoch_nll.clear();

  AdamW opt(model.parameters(), {cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
  Rng rng(Rng::derive(cfg.seed, 2));
  const std::size_t n = data.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    const double lr = cfg.rate_at(epoch);
    double total = 0.0;
    try {
      for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t stop = std::min(n, start + batch);
        const std::span<const std::size_t> idx(order.data() + start, stop - start);
        Tape tape;
        const Var x = tape.constant(take_rows(data.samples, idx));
        const Var z = tape.constant(take_rows(cond, idx));
        const Var nll = negative_log_likelihood(tape, model, x, z, true);
        total += nll.value().item() * static_cast<double>(idx.size());
        opt.zero_grad();
        tape.backward(nll);
        opt.step(lr);
      }
    } catch (const NumericError& e) {
      throw NumericError("flow training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    out.epoch_nll.push_back(total / static_cast<double>(n));
  }
  opt.zero_grad();
  out.final_nll = negative_log_likelihood(model, data.samples, cond).item();
  model.mark_trained();
  return model;
}

namespace {

void check_generation(const FlowModel& model, const ClassifierModel& classifier, double temperature) {
  if (!(temperature >= 0.0 && temperature <= kMaxTemperature)) {
    throw ParameterError("temperature must lie in [0, 1.5], got " + std::to_string(temperature));
  }
  if (!model.trained() || !classifier.trained()) {
    throw StateError("generation needs a trained flow and a trained classifier");
  }
  if (classifier.config().embed_dim != model.cond_dim() || classifier.config().input_dim != model.data_dim()) {
    throw DimensionError("flow and classifier dimensions disagree");
  }
}

void clamp_unit(Tensor& t) {
  for (double& v : t.data()) {
    v = std::clamp(v, 0.0, 1.0);
  }
}

}  // namespace

Tensor generate(const FlowModel& model, const ClassifierModel& classifier, const Tensor& x_ref, double temperature,
                std::uint64_t seed) {
  check_generation(model, classifier, temperature);
  const Tensor z = extract_embeddings(classifier, as_batch(x_ref, model.data_dim(), "generate"));
  if (z.rows() != 1) {
    throw ContractError("generate takes a single reference sample");
  }
  Rng rng(seed);
  Tensor noise(Shape{1, model.data_dim()});
  for (double& v : noise.data()) {
    v = temperature * rng.normal();
  }
  Tensor x = inverse(model, noise, z);
  clamp_unit(x);
  return Tensor(Shape{model.data_dim()}, x.values());
}

Dataset generate_batch(const FlowModel& model, const ClassifierModel& classifier, const Dataset& refs,
                       std::size_t per_ref, double temperature, std::uint64_t seed) {
  if (refs.size() == 0) {
    throw ContractError("generate_batch needs at least one reference");
  }
  if (per_ref == 0) {
    throw ContractError("per_ref must be at least 1");
  }
  check_generation(model, classifier, temperature);
  const Tensor ref_z = extract_embeddings(classifier, refs.samples);
  const std::size_t dim = model.data_dim();
  const std::size_t total = refs.size() * per_ref;

  Rng rng(seed);
  Dataset out;
  out.num_classes = refs.num_classes;
  out.labels.reserve(total);
  std::vector<double> pixels;
  pixels.reserve(total * dim);

  std::vector<std::size_t> ref_index;
  ref_index.reserve(total);
  for (std::size_t r = 0; r < refs.size(); ++r) {
    for (std::size_t k = 0; k < per_ref; ++k) {
      ref_index.push_back(r);
    }
  }
  for (std::size_t start = 0; start < total; start += kInverseChunk) {
    const std::size_t stop = std::min(total, start + kInverseChunk);
    const std::span<const std::size_t> idx(ref_index.data() + start, stop - start);
    Tensor noise(Shape{idx.size(), dim});
    for (double& v : noise.data()) {
      v = temperature * rng.normal();
    }
    Tensor x = inverse(model, noise, take_rows(ref_z, idx));
    clamp_unit(x);
    pixels.insert(pixels.end(), x.data().begin(), x.data().end());
    for (std::size_t r : idx) {
      out.labels.push_back(refs.labels[r]);
    }
  }
  out.samples = Tensor(Shape{total, dim}, std::move(pixels));
  return out;
}

}  // namespace cflow
