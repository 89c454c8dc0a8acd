#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "autoclip/embedding.hpp"
#include "autoclip/errors.hpp"

namespace autoclip {

// AEMB container: magic "AEMB", then little-endian u32 version (= 1),
// u32 dtype (0 = float32 LE), u32 ndim, ndim u64 dims, then the payload of
// product(dims) float32 values.
struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return n;
  }
};

namespace io_detail {

constexpr char kMagic[4] = {'A', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

/// Writes the full content to path via a temp file plus rename, so no reader
/// ever observes a partial file.
inline void atomic_write(const std::filesystem::path& path,
                         const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

}  // namespace io_detail

inline void write_tensor(const std::filesystem::path& path,
                         const Tensor& tensor) {
  if (tensor.data.size() != tensor.element_count()) {
    throw ShapeError("tensor payload does not match dims");
  }
  for (float v : tensor.data) {
    if (!std::isfinite(v)) throw FormatError("tensor contains non-finite entries");
  }
  std::string bytes;
  bytes.reserve(20 + tensor.dims.size() * 8 + tensor.data.size() * 4);
  bytes.append(io_detail::kMagic, 4);
  io_detail::put_u32(bytes, io_detail::kVersion);
  io_detail::put_u32(bytes, io_detail::kDtypeF32);
  io_detail::put_u32(bytes, static_cast<std::uint32_t>(tensor.dims.size()));
  for (std::uint64_t d : tensor.dims) io_detail::put_u64(bytes, d);
  // float32 payloads are stored as their IEEE-754 bit patterns, little-endian.
  for (float v : tensor.data) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    io_detail::put_u32(bytes, bits);
  }
  io_detail::atomic_write(path, bytes);
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();

  auto fail = [&](const std::string& what, std::size_t offset) -> FormatError {
    return FormatError(what + " at offset " + std::to_string(offset) + " in " +
                       path.string());
  };
  if (size < 16) throw fail("truncated header", size);
  if (std::memcmp(p, io_detail::kMagic, 4) != 0) throw fail("bad magic", 0);
  if (io_detail::get_u32(p + 4) != io_detail::kVersion) {
    throw fail("unsupported version", 4);
  }
  if (io_detail::get_u32(p + 8) != io_detail::kDtypeF32) {
    throw fail("unsupported dtype", 8);
  }
  const std::uint32_t ndim = io_detail::get_u32(p + 12);
  std::size_t offset = 16;
  if (size < offset + 8ull * ndim) throw fail("truncated dims", size);

  Tensor tensor;
  tensor.dims.resize(ndim);
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    tensor.dims[i] = io_detail::get_u64(p + offset);
    offset += 8;
    // Reject overflowing or oversized element counts before allocating.
    if (tensor.dims[i] != 0 &&
        count > std::numeric_limits<std::uint64_t>::max() / tensor.dims[i]) {
      throw fail("dimension product overflow", offset - 8);
    }
    count *= tensor.dims[i];
  }
  if (count > (size - offset) / 4 || size - offset != count * 4) {
    throw fail("payload length mismatch", offset);
  }
  tensor.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t bits = io_detail::get_u32(p + offset + 4 * i);
    std::memcpy(&tensor.data[i], &bits, 4);
  }
  return tensor;
}

struct TaskManifest {
  std::vector<std::string> classes;
  std::vector<std::string> templates;
  std::filesystem::path descriptor_file;
  std::filesystem::path image_file;
  std::optional<std::vector<std::size_t>> labels;  // 0-based class indices
  std::optional<double> temperature;
  std::string mode = "zero-shot";  // or "few-shot"
};

struct LoadedTask {
  TaskManifest manifest;
  DescriptorTensor descriptors;          // K x C x d, float payload widened
  std::vector<EmbeddingVector> images;   // N x d
};

/// Parses and cross-validates a task manifest: list lengths must match the
/// tensor dims of the referenced files. Relative paths resolve against the
/// manifest's directory. Throws ManifestError naming both sides of any
/// mismatch; no state is retained on failure.
inline LoadedTask load_task(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest: " + manifest_path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("invalid manifest JSON: " + std::string(e.what()));
  }

  TaskManifest m;
  try {
    m.classes = doc.at("classes").get<std::vector<std::string>>();
    m.templates = doc.at("templates").get<std::vector<std::string>>();
    m.descriptor_file = doc.at("descriptor_file").get<std::string>();
    m.image_file = doc.at("image_file").get<std::string>();
    if (doc.contains("labels") && !doc["labels"].is_null()) {
      m.labels = doc["labels"].get<std::vector<std::size_t>>();
    }
    if (doc.contains("temperature") && !doc["temperature"].is_null()) {
      m.temperature = doc["temperature"].get<double>();
    }
    if (doc.contains("mode") && !doc["mode"].is_null()) {
      m.mode = doc["mode"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("manifest field error: " + std::string(e.what()));
  }
  if (m.mode != "zero-shot" && m.mode != "few-shot") {
    throw ManifestError("mode must be zero-shot or few-shot, got " + m.mode);
  }
  if (m.temperature && *m.temperature <= 0.0) {
    throw ManifestError("temperature must be positive");
  }

  const std::filesystem::path dir = manifest_path.parent_path();
  auto resolve = [&](const std::filesystem::path& p) {
    return p.is_absolute() ? p : dir / p;
  };
  const Tensor desc = read_tensor(resolve(m.descriptor_file));
  const Tensor imgs = read_tensor(resolve(m.image_file));

  if (desc.dims.size() != 3) {
    throw ManifestError("descriptor tensor must be K x C x d, got ndim=" +
                        std::to_string(desc.dims.size()));
  }
  if (imgs.dims.size() != 2) {
    throw ManifestError("image tensor must be N x d, got ndim=" +
                        std::to_string(imgs.dims.size()));
  }
  const std::uint64_t k = desc.dims[0], c = desc.dims[1], d = desc.dims[2];
  const std::uint64_t n = imgs.dims[0];
  if (m.templates.size() != k) {
    throw ManifestError("templates=" + std::to_string(m.templates.size()) +
                        ", tensor K=" + std::to_string(k));
  }
  if (m.classes.size() != c) {
    throw ManifestError("classes=" + std::to_string(m.classes.size()) +
                        ", tensor C=" + std::to_string(c));
  }
  if (imgs.dims[1] != d) {
    throw ManifestError("image d=" + std::to_string(imgs.dims[1]) +
                        ", descriptor d=" + std::to_string(d));
  }
  if (m.labels) {
    if (m.labels->size() != n) {
      throw ManifestError("labels=" + std::to_string(m.labels->size()) +
                          ", tensor N=" + std::to_string(n));
    }
    for (std::size_t lbl : *m.labels) {
      if (lbl >= c) {
        throw ManifestError("label " + std::to_string(lbl) +
                            " out of range for C=" + std::to_string(c));
      }
    }
  }

  LoadedTask task;
  task.manifest = std::move(m);
  std::vector<double> widened(desc.data.begin(), desc.data.end());
  task.descriptors = DescriptorTensor(k, c, d, std::move(widened));
  task.images.reserve(n);
  for (std::uint64_t s = 0; s < n; ++s) {
    EmbeddingVector v(d);
    for (std::uint64_t x = 0; x < d; ++x) {
      v[x] = static_cast<double>(imgs.data[s * d + x]);
    }
    task.images.push_back(std::move(v));
  }
  return task;
}

struct ResultsRow {
  std::int64_t sample_index = 0;
  std::string predicted_class;
  std::optional<std::string> true_class;
  double top_score = 0.0;
  std::optional<double> weight_entropy_bits;
  std::optional<double> alpha;
};

namespace io_detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace io_detail

enum class ResultsFormat { Csv, Json };

/// Writes result rows sorted by sample_index. Missing optionals become empty
/// CSV cells or JSON nulls.
inline void write_results(std::vector<ResultsRow> rows,
                          const std::filesystem::path& path,
                          ResultsFormat format) {
  if (rows.empty()) throw IoError("write_results: no rows");
  std::sort(rows.begin(), rows.end(),
            [](const ResultsRow& a, const ResultsRow& b) {
              return a.sample_index < b.sample_index;
            });
  if (format == ResultsFormat::Csv) {
    std::string out =
        "sample_index,predicted_class,true_class,top_score,"
        "weight_entropy_bits,alpha\n";
    for (const auto& r : rows) {
      out += std::to_string(r.sample_index);
      out += ',';
      out += r.predicted_class;
      out += ',';
      if (r.true_class) out += *r.true_class;
      out += ',';
      out += io_detail::format_double(r.top_score);
      out += ',';
      if (r.weight_entropy_bits) {
        out += io_detail::format_double(*r.weight_entropy_bits);
      }
      out += ',';
      if (r.alpha) out += io_detail::format_double(*r.alpha);
      out += '\n';
    }
    io_detail::atomic_write(path, out);
  } else {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json obj;
      obj["sample_index"] = r.sample_index;
      obj["predicted_class"] = r.predicted_class;
      obj["true_class"] =
          r.true_class ? nlohmann::json(*r.true_class) : nlohmann::json();
      obj["top_score"] = r.top_score;
      obj["weight_entropy_bits"] = r.weight_entropy_bits
                                       ? nlohmann::json(*r.weight_entropy_bits)
                                       : nlohmann::json();
      obj["alpha"] = r.alpha ? nlohmann::json(*r.alpha) : nlohmann::json();
      arr.push_back(std::move(obj));
    }
    io_detail::atomic_write(path, arr.dump(2) + "\n");
  }
}

}  // namespace autoclip
