#include "cflow/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cflow/errors.hpp"

namespace cflow {

namespace {

using VT = ValueType;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(trim(item));
  }
  return out;
}

bool parse_integer(const std::string& s, std::int64_t& out) {
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

bool parse_real(const std::string& s, double& out) {
  if (s.empty()) {
    return false;
  }
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size() && std::isfinite(out);
}

bool parse_boolean(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0" || s == "no") {
    out = false;
    return true;
  }
  return false;
}

const ConfigKey& lookup(const std::string& key) {
  const auto& schema = config_schema();
  const auto it = std::find_if(schema.begin(), schema.end(), [&](const ConfigKey& k) { return k.name == key; });
  if (it == schema.end()) {
    throw ValidationError("unknown config key '" + key + "'");
  }
  return *it;
}

// Empty string when `value` fits the key, otherwise the reason it does not.
std::string type_error(const ConfigKey& key, const std::string& value) {
  std::int64_t i = 0;
  double r = 0.0;
  bool b = false;
  switch (key.type) {
    case VT::integer:
      return parse_integer(value, i) ? "" : "expected an integer";
    case VT::real:
      return parse_real(value, r) ? "" : "expected a number";
    case VT::boolean:
      return parse_boolean(value, b) ? "" : "expected true or false";
    case VT::text:
      if (!key.choices.empty() && std::find(key.choices.begin(), key.choices.end(), value) == key.choices.end()) {
        std::string allowed;
        for (const auto& c : key.choices) {
          allowed += (allowed.empty() ? "" : ", ") + c;
        }
        return "expected one of " + allowed;
      }
      return "";
    case VT::integer_list:
      for (const auto& item : split_list(value)) {
        if (!parse_integer(item, i)) {
          return "expected a comma-separated list of integers";
        }
      }
      return value.empty() ? "expected at least one integer" : "";
    case VT::real_list:
      for (const auto& item : split_list(value)) {
        if (!parse_real(item, r)) {
          return "expected a comma-separated list of numbers";
        }
      }
      return value.empty() ? "expected at least one number" : "";
    case VT::text_list:
      return value.empty() ? "expected at least one entry" : "";
  }
  return "";
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"experiment", VT::text, "compare", "experiment kind", {"compare", "label_scarcity", "augmentation"}},
      {"seeds", VT::integer_list, "1,2,3", "one run per seed", {}},
      {"jobs", VT::integer, "1", "worker threads for seeds (does not affect results)", {}},

      {"data.side", VT::integer, "16", "toy image side length", {}},
      {"data.train_per_class", VT::integer, "1000", "toy training samples per class", {}},
      {"data.val_per_class", VT::integer, "250", "toy validation samples per class", {}},
      {"data.test_per_class", VT::integer, "250", "toy test samples per class", {}},
      {"data.intensity", VT::real, "1.0", "toy class-1 blob strength", {}},
      {"data.noise", VT::real, "0.04", "toy pixel noise", {}},
      {"data.train_file", VT::text, "", "CFDS training split replacing the toy generator", {}},
      {"data.test_file", VT::text, "", "CFDS test split replacing the toy generator", {}},

      {"classifier.hidden", VT::integer_list, "64", "hidden widths of the feature extractor", {}},
      {"classifier.embed_dim", VT::integer, "32", "dimension of the condition embedding", {}},
      {"classifier.learning_rate", VT::real, "0.003", "", {}},
      {"classifier.weight_decay", VT::real, "1e-7", "", {}},
      {"classifier.batch_size", VT::integer, "32", "", {}},
      {"classifier.epochs", VT::integer, "150", "", {}},
      {"classifier.lr_decay", VT::real, "0.99", "per-epoch learning-rate factor", {}},
      {"classifier.min_steps", VT::integer, "0", "lower bound on optimiser steps", {}},

      {"flow.blocks", VT::integer, "4", "permutation + two couplings per block", {}},
      {"flow.hidden", VT::integer, "32", "hidden width of the scale and shift nets", {}},
      {"flow.hidden_layers", VT::integer, "1", "", {}},
      {"flow.log_scale_bound", VT::real, "2.0", "", {}},
      {"flow.learning_rate", VT::real, "0.001", "", {}},
      {"flow.beta1", VT::real, "0.5", "", {}},
      {"flow.beta2", VT::real, "0.999", "", {}},
      {"flow.weight_decay", VT::real, "1e-6", "", {}},
      {"flow.batch_size", VT::integer, "64", "", {}},
      {"flow.epochs", VT::integer, "80", "", {}},
      {"flow.warmup_epochs", VT::integer, "2", "", {}},
      {"flow.lr_decay", VT::real, "0.99", "", {}},

      {"generate.temperature", VT::real, "0.9", "noise standard-deviation scale", {}},
      {"generate.per_ref", VT::integer, "1", "synthetic samples per reference", {}},
      {"eval.bootstrap", VT::integer, "200", "bootstrap resamples of the test set", {}},

      {"semisup.max_iters", VT::integer, "10", "", {}},
      {"semisup.epsilon", VT::real, "0.001", "changed-label fraction that counts as stable", {}},
      {"semisup.metric", VT::text, "gaussian", "", {"gaussian", "euclidean"}},
      {"semisup.sigma", VT::real, "0", "kernel bandwidth; 0 uses the median heuristic", {}},
      {"semisup.retrain_epochs", VT::integer, "0", "epochs per retraining round; 0 reuses classifier.epochs", {}},

      {"scarcity.grid", VT::text_list, "20,50,0.5%,1%,5%,100%", "labelled budgets", {}},
      {"scarcity.preserve_ratio", VT::boolean, "true", "keep the class ratio in labelled subsets", {}},

      {"augment.minority_fraction", VT::real, "0.2", "share of class 1 in the imbalanced training set", {}},
      {"augment.target_balance", VT::real_list, "0.5", "class-1 shares to augment up to", {}},
  };
  return schema;
}

Config::Config() {
  for (const auto& key : config_schema()) {
    values_[key.name] = key.fallback;
  }
}

Config Config::parse(std::string_view text, const std::string& origin) {
  Config cfg;
  std::stringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#') {
      continue;
    }
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) {
      throw ValidationError(where + "expected 'key = value'");
    }
    try {
      cfg.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot read config file " + path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

void Config::set(const std::string& key, const std::string& value) {
  const ConfigKey& k = lookup(key);
  if (const std::string why = type_error(k, value); !why.empty()) {
    throw ValidationError("bad value '" + value + "' for " + key + ": " + why);
  }
  values_[key] = value;
}

const std::string& Config::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw ValidationError("unknown config key '" + key + "'");
  }
  return it->second;
}

std::int64_t Config::integer(const std::string& key) const {
  std::int64_t v = 0;
  parse_integer(raw(key), v);
  return v;
}

std::size_t Config::count(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) {
    throw ParameterError(key + " must not be negative");
  }
  return static_cast<std::size_t>(v);
}

double Config::real(const std::string& key) const {
  double v = 0.0;
  parse_real(raw(key), v);
  return v;
}

bool Config::boolean(const std::string& key) const {
  bool v = false;
  parse_boolean(raw(key), v);
  return v;
}

std::vector<std::int64_t> Config::integers(const std::string& key) const {
  std::vector<std::int64_t> out;
  for (const auto& item : split_list(raw(key))) {
    std::int64_t v = 0;
    parse_integer(item, v);
    out.push_back(v);
  }
  return out;
}

std::vector<double> Config::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(raw(key))) {
    double v = 0.0;
    parse_real(item, v);
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> Config::texts(const std::string& key) const { return split_list(raw(key)); }

std::string Config::canonical() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    if (key == "jobs") {
      continue;
    }
    out += key + "=" + value + "\n";
  }
  return out;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string Config::hash() const {
  static constexpr char kHex[] = "0123456789abcdef";
  std::uint64_t h = fnv1a(canonical());
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

ExperimentSetup resolve(const Config& cfg) {
  ExperimentSetup s;
  s.kind = cfg.text("experiment");
  for (std::int64_t seed : cfg.integers("seeds")) {
    if (seed < 0) {
      throw ParameterError("seeds must be non-negative");
    }
    s.seeds.push_back(static_cast<std::uint64_t>(seed));
  }
  s.jobs = std::max<std::size_t>(1, cfg.count("jobs"));

  s.data.side = cfg.count("data.side");
  s.data.train_counts.assign(2, cfg.count("data.train_per_class"));
  s.data.val_counts.assign(2, cfg.count("data.val_per_class"));
  s.data.test_counts.assign(2, cfg.count("data.test_per_class"));
  s.data.intensity = cfg.real("data.intensity");
  s.data.noise = cfg.real("data.noise");
  s.train_file = cfg.text("data.train_file");
  s.test_file = cfg.text("data.test_file");
  if (s.train_file.empty() != s.test_file.empty()) {
    throw ParameterError("data.train_file and data.test_file must be given together");
  }

  ClassifierConfig& c = s.classifier;
  c.input_dim = s.data.side * s.data.side;
  c.hidden_dims.clear();
  for (std::int64_t w : cfg.integers("classifier.hidden")) {
    if (w <= 0) {
      throw ParameterError("classifier.hidden widths must be positive");
    }
    c.hidden_dims.push_back(static_cast<std::size_t>(w));
  }
  c.embed_dim = cfg.count("classifier.embed_dim");
  c.num_classes = 2;
  c.learning_rate = cfg.real("classifier.learning_rate");
  c.weight_decay = cfg.real("classifier.weight_decay");
  c.batch_size = cfg.count("classifier.batch_size");
  c.epochs = cfg.count("classifier.epochs");
  c.lr_decay = cfg.real("classifier.lr_decay");
  c.min_steps = cfg.count("classifier.min_steps");

  FlowConfig& f = s.flow;
  f.data_dim = c.input_dim;
  f.cond_dim = c.embed_dim;
  f.blocks = cfg.count("flow.blocks");
  f.hidden = cfg.count("flow.hidden");
  f.hidden_layers = cfg.count("flow.hidden_layers");
  f.log_scale_bound = cfg.real("flow.log_scale_bound");

  FlowTrainConfig& t = s.flow_train;
  t.learning_rate = cfg.real("flow.learning_rate");
  t.beta1 = cfg.real("flow.beta1");
  t.beta2 = cfg.real("flow.beta2");
  t.weight_decay = cfg.real("flow.weight_decay");
  t.batch_size = cfg.count("flow.batch_size");
  t.epochs = cfg.count("flow.epochs");
  t.warmup_epochs = cfg.count("flow.warmup_epochs");
  t.lr_decay = cfg.real("flow.lr_decay");

  s.temperature = cfg.real("generate.temperature");
  s.per_ref = cfg.count("generate.per_ref");
  s.bootstrap = cfg.count("eval.bootstrap");

  s.semisup.classifier = c;
  s.semisup.max_iters = cfg.count("semisup.max_iters");
  s.semisup.epsilon = cfg.real("semisup.epsilon");
  s.semisup.metric = cfg.text("semisup.metric") == "euclidean" ? SimilarityMetric::Kind::negative_euclidean
                                                              : SimilarityMetric::Kind::gaussian_kernel;
  s.semisup.sigma = cfg.real("semisup.sigma");
  s.semisup.retrain_epochs = cfg.count("semisup.retrain_epochs");

  s.label_grid = cfg.texts("scarcity.grid");
  for (const auto& b : s.label_grid) {
    LabelBudget::parse(b);
  }
  s.preserve_ratio = cfg.boolean("scarcity.preserve_ratio");

  s.minority_fraction = cfg.real("augment.minority_fraction");
  s.target_balance = cfg.reals("augment.target_balance");

  if (s.seeds.empty()) {
    throw ParameterError("at least one seed is required");
  }
  if (s.train_file.empty()) {
    s.data.validate();
  }
  c.validate();
  f.validate();
  t.validate();
  s.semisup.validate();
  if (!(s.temperature >= 0.0 && s.temperature <= 1.5)) {
    throw ParameterError("generate.temperature must lie in [0, 1.5]");
  }
  if (s.per_ref == 0) {
    throw ParameterError("generate.per_ref must be at least 1");
  }
  if (s.bootstrap < 2) {
    throw ParameterError("eval.bootstrap must be at least 2");
  }
  if (!(s.minority_fraction > 0.0 && s.minority_fraction < 0.5)) {
    throw ParameterError("augment.minority_fraction must lie in (0, 0.5)");
  }
  for (double b : s.target_balance) {
    if (!(b > 0.0 && b < 1.0)) {
      throw ParameterError("augment.target_balance entries must lie in (0, 1)");
    }
  }
  return s;
}

}  // namespace cflow
