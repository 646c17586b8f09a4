#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cflow/tensor.hpp"

namespace cflow {

// Little-endian byte encoder.
class ByteWriter {
 public:
  void bytes(std::string_view raw);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

// Little-endian decoder; every short read is a FormatError carrying the offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::string bytes(std::size_t n, const char* what);
  std::uint32_t u32(const char* what);
  std::uint64_t u64(const char* what);
  double f64(const char* what);
  std::vector<double> f64s(std::size_t n, const char* what);

  std::uint64_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// "CFLW" model container:
//   magic "CFLW" | u32 version | u64 config length | config JSON (UTF-8)
//   | u64 block count | blocks: u32 rank, u64 extents[rank], f64 values[...]
// All integers and floats little-endian.
struct ModelFile {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json config;
  std::vector<Tensor> blocks;
};

std::vector<std::uint8_t> encode_model(const ModelFile& model);
ModelFile decode_model(std::span<const std::uint8_t> bytes);

}  // namespace cflow
