#include "cflow/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cflow/errors.hpp"

namespace cflow {

namespace {

constexpr std::string_view kModelMagic = "CFLW";
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

void ByteWriter::bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> values) {
  buf_.reserve(buf_.size() + 8 * values.size());
  for (double v : values) {
    f64(v);
  }
}

void ByteReader::need(std::size_t n, const char* what) const {
  if (remaining() < n) {
    throw FormatError(std::string("truncated input while reading ") + what, pos_);
  }
}

std::string ByteReader::bytes(std::size_t n, const char* what) {
  need(n, what);
  std::string out(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return out;
}

std::uint32_t ByteReader::u32(const char* what) {
  need(4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  }
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64(const char* what) {
  need(8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  }
  pos_ += 8;
  return v;
}

double ByteReader::f64(const char* what) { return std::bit_cast<double>(u64(what)); }

std::vector<double> ByteReader::f64s(std::size_t n, const char* what) {
  if (n > remaining() / 8) {
    throw FormatError(std::string("truncated input while reading ") + what, pos_);
  }
  std::vector<double> out(n);
  for (double& v : out) {
    v = f64(what);
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open " + path.string());
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error("write failed for " + path.string());
  }
}

std::vector<std::uint8_t> encode_model(const ModelFile& model) {
  ByteWriter w;
  w.bytes(kModelMagic);
  w.u32(ModelFile::kVersion);
  const std::string config = model.config.dump();
  w.u64(config.size());
  w.bytes(config);
  w.u64(model.blocks.size());
  for (const Tensor& t : model.blocks) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t extent : t.shape()) {
      w.u64(extent);
    }
    w.f64s(t.data());
  }
  return w.buffer();
}

ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(4, "magic") != kModelMagic) {
    throw FormatError("bad magic, expected CFLW", 0);
  }
  const std::uint64_t version_at = r.offset();
  if (const std::uint32_t version = r.u32("version"); version != ModelFile::kVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version), version_at);
  }
  ModelFile out;
  const std::uint64_t config_len = r.u64("config length");
  const std::uint64_t config_at = r.offset();
  if (config_len > r.remaining()) {
    throw FormatError("truncated input while reading config", config_at);
  }
  try {
    out.config = nlohmann::json::parse(r.bytes(config_len, "config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config block is not valid JSON: ") + e.what(), config_at);
  }
  const std::uint64_t count = r.u64("block count");
  for (std::uint64_t b = 0; b < count; ++b) {
    const std::uint64_t block_at = r.offset();
    const std::uint32_t rank = r.u32("block rank");
    if (rank > kMaxRank) {
      throw FormatError("block rank " + std::to_string(rank) + " too large", block_at);
    }
    Shape shape(rank);
    for (auto& extent : shape) {
      extent = r.u64("block extent");
      if (extent == 0) {
        throw FormatError("zero extent in block", r.offset() - 8);
      }
    }
    const std::uint64_t values_at = r.offset();
    auto values = r.f64s(shape_size(shape), "block values");
    try {
      out.blocks.emplace_back(std::move(shape), std::move(values));
    } catch (const NumericError&) {
      throw FormatError("non-finite parameter value", values_at);
    }
  }
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes after last block", r.offset());
  }
  return out;
}

}  // namespace cflow
