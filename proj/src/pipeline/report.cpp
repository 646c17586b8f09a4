#include "cflow/report.hpp"

#include "cflow/errors.hpp"

namespace cflow {

nlohmann::json make_report(const std::string& config_hash, nlohmann::json experiments, nlohmann::json aggregate) {
  return {{"version", kReportVersion},
          {"config_hash", config_hash},
          {"experiments", std::move(experiments)},
          {"aggregate", std::move(aggregate)}};
}

void validate_report(const nlohmann::json& report) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) {
      throw ValidationError("report: " + what);
    }
  };
  require(report.is_object(), "top level must be an object");
  for (const char* key : {"version", "config_hash", "experiments", "aggregate"}) {
    require(report.contains(key), std::string("missing '") + key + "'");
  }
  require(report.size() == 4, "unexpected top-level members");
  require(report["version"].is_number_integer() && report["version"].get<int>() == kReportVersion,
          "unsupported version");
  require(report["config_hash"].is_string() && report["config_hash"].get<std::string>().size() == 16,
          "config_hash must be 16 hex digits");
  require(report["experiments"].is_array(), "experiments must be an array");
  require(report["aggregate"].is_object(), "aggregate must be an object");
  std::size_t i = 0;
  for (const auto& e : report["experiments"]) {
    const std::string at = "experiments[" + std::to_string(i++) + "]: ";
    require(e.is_object(), at + "entry must be an object");
    require(e.contains("kind") && e["kind"].is_string(), at + "missing kind");
    require(e.contains("seed") && e["seed"].is_number_unsigned(), at + "missing seed");
    require(e.contains("status") && e["status"].is_string(), at + "missing status");
    for (const char* key : {"metrics", "frechet", "timings"}) {
      require(e.contains(key) && e[key].is_object(), at + "missing object '" + key + "'");
    }
    if (e["status"] == "failed") {
      require(e.contains("failed_stage") && e["failed_stage"].is_string(), at + "failed entry lacks failed_stage");
    } else {
      require(e["status"] == "ok", at + "status must be ok or failed");
    }
    for (const auto& [name, value] : e["timings"].items()) {
      require(value.is_number(), at + "timing '" + name + "' is not a number");
    }
  }
}

nlohmann::json without_timings(const nlohmann::json& report) {
  if (report.is_object()) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [key, value] : report.items()) {
      if (key != "timings") {
        out[key] = without_timings(value);
      }
    }
    return out;
  }
  if (report.is_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : report) {
      out.push_back(without_timings(v));
    }
    return out;
  }
  return report;
}

nlohmann::json to_json(const MetricsReport& m) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : m.per_class) {
    per_class.push_back({{"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"precision_undefined", c.precision_undefined},
                         {"recall_undefined", c.recall_undefined},
                         {"f1_undefined", c.f1_undefined}});
  }
  return {{"accuracy", m.accuracy},
          {"macro_precision", m.macro_precision},
          {"macro_recall", m.macro_recall},
          {"macro_f1", m.macro_f1},
          {"sample_count", m.sample_count},
          {"per_class", per_class}};
}

nlohmann::json to_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

nlohmann::json to_json(const BootstrapResult& b) {
  nlohmann::json recall = nlohmann::json::array();
  for (const auto& r : b.class_recall) {
    recall.push_back(to_json(r));
  }
  return {{"resamples", b.resamples},
          {"accuracy", to_json(b.accuracy)},
          {"macro_precision", to_json(b.macro_precision)},
          {"macro_recall", to_json(b.macro_recall)},
          {"macro_f1", to_json(b.macro_f1)},
          {"class_recall", recall}};
}

}  // namespace cflow
