#include "cflow/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "cflow/binary_io.hpp"
#include "cflow/errors.hpp"

namespace cflow {

namespace {

constexpr std::string_view kDatasetMagic = "CFDS";

}  // namespace

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.samples = take_rows(samples, indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.labels.push_back(labels[i]);
  }
  return out;
}

void Dataset::validate() const {
  if (samples.rank() != 2 || samples.rows() != labels.size()) {
    throw ValidationError("dataset has " + std::to_string(labels.size()) + " labels for samples of shape " +
                          shape_string(samples.shape()));
  }
  if (num_classes < 2) {
    throw ValidationError("dataset needs at least two classes");
  }
  class_counts();
  for (double v : samples.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError("pixel value " + std::to_string(v) + " outside [0, 1]");
    }
  }
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.num_classes != b.num_classes) {
    throw ContractError("concat of datasets with different class counts");
  }
  Dataset out;
  out.num_classes = a.num_classes;
  out.samples = vstack(a.samples, b.samples);
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

void require_unit_range(const Tensor& samples, const char* where) {
  for (double v : samples.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError(std::string(where) + ": inputs must be scaled to [0, 1], found " + std::to_string(v));
    }
  }
}

std::size_t DatasetManifest::count() const {
  std::size_t n = 0;
  for (std::size_t c : class_counts) {
    n += c;
  }
  return n;
}

nlohmann::json DatasetManifest::to_json() const {
  return nlohmann::json{{"name", name},
                        {"split", split},
                        {"side", side},
                        {"class_names", class_names},
                        {"class_counts", class_counts},
                        {"splits", {{"train", train_count}, {"val", val_count}, {"test", test_count}}},
                        {"source", source},
                        {"seed", seed}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.split = j.at("split").get<std::string>();
    m.side = j.at("side").get<std::size_t>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.class_counts = j.at("class_counts").get<std::vector<std::size_t>>();
    m.train_count = j.at("splits").at("train").get<std::size_t>();
    m.val_count = j.at("splits").at("val").get<std::size_t>();
    m.test_count = j.at("splits").at("test").get<std::size_t>();
    m.source = j.at("source");
    m.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed dataset manifest: ") + e.what());
  }
  return m;
}

DatasetManifest describe(const Dataset& data, std::string split, std::size_t side, std::uint64_t seed) {
  DatasetManifest m;
  m.split = std::move(split);
  m.side = side;
  m.seed = seed;
  m.class_counts = data.class_counts();
  m.class_names.clear();
  if (data.num_classes == 2) {
    m.class_names = {"non_covid", "covid"};
  } else {
    for (std::size_t k = 0; k < data.num_classes; ++k) {
      m.class_names.push_back("class" + std::to_string(k));
    }
  }
  if (m.split == "train") {
    m.train_count = data.size();
  } else if (m.split == "val") {
    m.val_count = data.size();
  } else if (m.split == "test") {
    m.test_count = data.size();
  }
  return m;
}

std::vector<std::uint8_t> encode_dataset(const DatasetFile& file) {
  file.data.validate();
  ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetFormatVersion);
  const std::string manifest = file.manifest.to_json().dump();
  w.u64(manifest.size());
  w.bytes(manifest);
  w.u64(file.data.size());
  w.u64(file.data.dim());
  w.f64s(file.data.samples.data());
  for (int y : file.data.labels) {
    w.u32(static_cast<std::uint32_t>(y));
  }
  return w.buffer();
}

DatasetFile decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(4, "magic") != kDatasetMagic) {
    throw FormatError("bad magic, expected CFDS", 0);
  }
  const std::uint64_t version_at = r.offset();
  if (const std::uint32_t version = r.u32("version"); version != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset format version " + std::to_string(version), version_at);
  }
  const std::uint64_t manifest_len = r.u64("manifest length");
  const std::uint64_t manifest_at = r.offset();
  if (manifest_len > r.remaining()) {
    throw FormatError("truncated input while reading manifest", manifest_at);
  }
  DatasetFile out;
  try {
    out.manifest = DatasetManifest::from_json(nlohmann::json::parse(r.bytes(manifest_len, "manifest")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), manifest_at);
  }
  const std::uint64_t rows = r.u64("row count");
  const std::uint64_t dim = r.u64("dimension");
  if (rows == 0 || dim == 0) {
    throw FormatError("empty dataset block", r.offset() - 16);
  }
  if (rows > r.remaining() / 8 / dim) {
    throw FormatError("truncated input while reading pixels", r.offset());
  }
  const std::uint64_t pixels_at = r.offset();
  std::vector<double> pixels = r.f64s(rows * dim, "pixels");
  try {
    out.data.samples = Tensor(Shape{rows, dim}, std::move(pixels));
  } catch (const NumericError&) {
    throw FormatError("non-finite pixel value", pixels_at);
  }
  out.data.labels.resize(rows);
  for (auto& y : out.data.labels) {
    y = static_cast<int>(r.u32("labels"));
  }
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes after label block", r.offset());
  }

  const DatasetManifest& m = out.manifest;
  out.data.num_classes = m.class_names.size();
  if (m.class_counts.size() != m.class_names.size()) {
    throw ValidationError("manifest lists " + std::to_string(m.class_names.size()) + " class names but " +
                          std::to_string(m.class_counts.size()) + " class counts");
  }
  out.data.validate();
  if (m.count() != rows) {
    throw ValidationError("manifest counts " + std::to_string(m.count()) + " samples, file stores " +
                          std::to_string(rows));
  }
  if (out.data.class_counts() != m.class_counts) {
    throw ValidationError("manifest class counts do not match stored labels");
  }
  if (m.side * m.side != dim) {
    throw ValidationError("manifest side " + std::to_string(m.side) + " does not match dimension " +
                          std::to_string(dim));
  }
  return out;
}

void save_dataset(const DatasetFile& file, const std::filesystem::path& path) {
  write_file_bytes(path, encode_dataset(file));
}

DatasetFile load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error("dataset file not found: " + path.string());
  }
  return decode_dataset(read_file_bytes(path));
}

namespace {

std::string next_pgm_token(std::istream& in) {
  std::string token;
  char c = 0;
  while (in.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) {
        break;
      }
      continue;
    }
    token.push_back(c);
  }
  return token;
}

std::vector<double> read_pgm(const std::filesystem::path& path, std::size_t* width, std::size_t* height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open " + path.string());
  }
  if (next_pgm_token(in) != "P5") {
    throw FormatError(path.string() + " is not a binary PGM (P5)", 0);
  }
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_pgm_token(in));
    h = std::stoul(next_pgm_token(in));
    maxval = std::stoul(next_pgm_token(in));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PGM header", static_cast<std::uint64_t>(in.tellg()));
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw FormatError(path.string() + ": only 8-bit PGM images are supported", 0);
  }
  const auto header_end = static_cast<std::uint64_t>(in.tellg());
  std::vector<unsigned char> raw(w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw FormatError(path.string() + ": truncated pixel data", header_end + static_cast<std::uint64_t>(in.gcount()));
  }
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = std::min(1.0, static_cast<double>(raw[i]) / static_cast<double>(maxval));
  }
  *width = w;
  *height = h;
  return out;
}

}  // namespace

Dataset load_pgm_dataset(const std::filesystem::path& csv_path, std::size_t num_classes, std::size_t* side_out) {
  std::ifstream csv(csv_path);
  if (!csv) {
    throw Error("cannot open " + csv_path.string());
  }
  Dataset out;
  out.num_classes = num_classes;
  std::vector<double> pixels;
  std::size_t side = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') {
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ValidationError(csv_path.string() + ":" + std::to_string(line_no) + ": expected 'path,label'");
    }
    int label = 0;
    try {
      label = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw ValidationError(csv_path.string() + ":" + std::to_string(line_no) + ": bad label");
    }
    std::size_t w = 0, h = 0;
    auto img = read_pgm(csv_path.parent_path() / line.substr(0, comma), &w, &h);
    if (w != h || (side != 0 && w != side)) {
      throw ValidationError(csv_path.string() + ":" + std::to_string(line_no) +
                            ": images must be square and share one size");
    }
    side = w;
    pixels.insert(pixels.end(), img.begin(), img.end());
    out.labels.push_back(label);
  }
  if (out.labels.empty()) {
    throw ValidationError(csv_path.string() + " lists no images");
  }
  out.samples = Tensor(Shape{out.labels.size(), side * side}, std::move(pixels));
  out.validate();
  if (side_out != nullptr) {
    *side_out = side;
  }
  return out;
}

}  // namespace cflow
