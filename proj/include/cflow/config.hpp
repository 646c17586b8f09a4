#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cflow/classifier.hpp"
#include "cflow/condflow.hpp"
#include "cflow/semisup.hpp"
#include "cflow/toy.hpp"

namespace cflow {

enum class ValueType { integer, real, boolean, text, integer_list, real_list, text_list };

struct ConfigKey {
  std::string name;
  ValueType type;
  std::string fallback;
  std::string help;
  std::vector<std::string> choices;  // for text keys; empty means free-form
};

// Every recognised key with its type and default.
const std::vector<ConfigKey>& config_schema();

// Flat "key = value" settings. Lines starting with '#' are comments; list
// values are comma separated. Unknown keys and ill-typed values raise
// ValidationError naming the line.
class Config {
 public:
  Config();

  static Config parse(std::string_view text, const std::string& origin = "<config>");
  // Throws Error naming the path when it cannot be read.
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& raw(const std::string& key) const;

  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  const std::string& text(const std::string& key) const { return raw(key); }
  std::vector<std::int64_t> integers(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<std::string> texts(const std::string& key) const;

  // Sorted key=value lines over every key that affects results.
  std::string canonical() const;
  // 16 hex digits of FNV-1a over canonical().
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a(std::string_view bytes);

// Typed view of a Config.
struct ExperimentSetup {
  std::string kind;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;

  ToyParams data;
  std::string train_file;  // optional CFDS files replacing the toy generator
  std::string test_file;

  ClassifierConfig classifier;
  FlowConfig flow;
  FlowTrainConfig flow_train;
  double temperature = 0.9;
  std::size_t per_ref = 1;
  std::size_t bootstrap = 200;

  SemisupConfig semisup;
  std::vector<std::string> label_grid;
  bool preserve_ratio = true;

  double minority_fraction = 0.2;
  std::vector<double> target_balance;
};

// Builds and validates the typed setup; throws ParameterError.
ExperimentSetup resolve(const Config& cfg);

}  // namespace cflow
