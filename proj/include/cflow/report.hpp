#pragma once

#include <string>
#include <vector>

#include "cflow/eval.hpp"
#include "json.hpp"

namespace cflow {

inline constexpr int kReportVersion = 1;

// {version, config_hash, experiments, aggregate}
nlohmann::json make_report(const std::string& config_hash, nlohmann::json experiments, nlohmann::json aggregate);

// Throws ValidationError describing the first schema violation.
void validate_report(const nlohmann::json& report);

// Copy with every "timings" member removed, for reproducibility checks.
nlohmann::json without_timings(const nlohmann::json& report);

nlohmann::json to_json(const MetricsReport& m);
nlohmann::json to_json(const Summary& s);
nlohmann::json to_json(const BootstrapResult& b);

}  // namespace cflow
