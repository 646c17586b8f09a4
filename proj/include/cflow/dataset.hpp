#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cflow/tensor.hpp"

namespace cflow {

// Labelled samples, one flattened image per row.
struct Dataset {
  Tensor samples;           // [n, dim]
  std::vector<int> labels;  // n entries in [0, num_classes)
  std::size_t num_classes = 2;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return samples.cols(); }

  std::vector<std::size_t> class_counts() const;
  Dataset subset(std::span<const std::size_t> indices) const;

  // Row count, label range and [0,1] pixel range; throws ValidationError.
  void validate() const;
};

Dataset concat(const Dataset& a, const Dataset& b);

// Throws ContractError unless every value lies in [0, 1].
void require_unit_range(const Tensor& samples, const char* where);

struct DatasetManifest {
  std::string name = "toy";
  std::string split = "train";
  std::size_t side = 16;
  std::vector<std::string> class_names{"non_covid", "covid"};
  std::vector<std::size_t> class_counts;
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  std::size_t test_count = 0;
  nlohmann::json source = nlohmann::json::object();
  std::uint64_t seed = 0;

  std::size_t count() const;
  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

struct DatasetFile {
  Dataset data;
  DatasetManifest manifest;
};

// "CFDS" split container:
//   magic "CFDS" | u32 version | u64 manifest length | manifest JSON
//   | u64 rows | u64 dim | f64 pixels[rows*dim] | u32 labels[rows]
// All little-endian. Loading checks the manifest against the stored data.
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

std::vector<std::uint8_t> encode_dataset(const DatasetFile& file);
DatasetFile decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const DatasetFile& file, const std::filesystem::path& path);
DatasetFile load_dataset(const std::filesystem::path& path);

// Builds the manifest fields that follow from `data` (counts, split name).
DatasetManifest describe(const Dataset& data, std::string split, std::size_t side, std::uint64_t seed);

// Reads 8-bit binary PGM (P5) images listed in a "path,label" CSV. Paths
// are relative to the CSV's directory.
Dataset load_pgm_dataset(const std::filesystem::path& csv_path, std::size_t num_classes, std::size_t* side_out);

}  // namespace cflow
