#pragma once

#include <cstdint>
#include <string>

#include "cflow/config.hpp"
#include "cflow/dataset.hpp"
#include "json.hpp"

namespace cflow {

struct SeedData {
  Dataset train;
  Dataset test;
  std::size_t side = 0;
};

// Toy splits generated from the seed, or the configured CFDS files.
// `train_counts` overrides the per-class training counts of the toy generator.
SeedData load_seed_data(const ExperimentSetup& setup, std::uint64_t seed,
                        const std::vector<std::size_t>* train_counts = nullptr);

// Per-seed report entries. Stage failures are recorded in the entry
// (status "failed", failed_stage) rather than thrown.
nlohmann::json compare_seed(const ExperimentSetup& setup, std::uint64_t seed);
nlohmann::json label_scarcity_seed(const ExperimentSetup& setup, std::uint64_t seed);  // one entry per budget
nlohmann::json augmentation_seed(const ExperimentSetup& setup, std::uint64_t seed);

// Aggregates recomputed from the entries alone.
nlohmann::json aggregate_compare(const nlohmann::json& experiments);
nlohmann::json aggregate_label_scarcity(const nlohmann::json& experiments);
nlohmann::json aggregate_augmentation(const nlohmann::json& experiments);

// Seeds run on up to setup.jobs threads; entries are merged in seed order.
nlohmann::json run_compare(const ExperimentSetup& setup, const std::string& config_hash);
nlohmann::json run_label_scarcity(const ExperimentSetup& setup, const std::string& config_hash);
nlohmann::json run_augmentation(const ExperimentSetup& setup, const std::string& config_hash);
nlohmann::json run_experiment(const ExperimentSetup& setup, const std::string& config_hash);

// Synthetic class-1 samples needed to lift the class-1 share to `target`.
// Throws ContractError when the share is already above the target.
std::size_t balancing_count(std::size_t majority, std::size_t minority, double target);

}  // namespace cflow
