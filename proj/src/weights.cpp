#include "odssd/weights.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "odssd/error.hpp"
#include "odssd/image.hpp"

namespace odssd {

static_assert(std::endian::native == std::endian::little, "weights blobs assume a little-endian host");

namespace {

constexpr const char* kMagic = "ODSSD-WEIGHTS 1";

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string dims_str(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s.empty() ? "scalar" : s;
}

std::string float_str(float v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

float int8_scale(std::span<const float> w) {
  float m = 0.0f;
  for (float v : w) m = std::max(m, std::abs(v));
  return m > 0.0f ? m / 127.0f : 1.0f;
}

struct EntryLine {
  std::string name;
  WeightPrecision precision;
  float scale;
  Shape shape;
};

EntryLine parse_entry(const std::string& line) {
  std::istringstream is(line);
  std::string name, dtype, scale, dims;
  if (!(is >> name >> dtype >> scale >> dims)) throw FormatError("weights: malformed entry line '" + line + "'");
  EntryLine e{name, WeightPrecision::Float32, 1.0f, {}};
  try {
    e.precision = parse_precision(dtype);
  } catch (const InvalidInput&) {
    throw FormatError("weights: unknown dtype '" + dtype + "' for " + name);
  }
  auto r = std::from_chars(scale.data(), scale.data() + scale.size(), e.scale);
  if (r.ec != std::errc() || r.ptr != scale.data() + scale.size() || !(e.scale > 0.0f)) {
    throw FormatError("weights: bad scale for " + name);
  }
  if (dims != "scalar") {
    std::istringstream ds(dims);
    std::string d;
    while (std::getline(ds, d, 'x')) {
      std::int64_t v = 0;
      auto rr = std::from_chars(d.data(), d.data() + d.size(), v);
      if (rr.ec != std::errc() || rr.ptr != d.data() + d.size() || v <= 0) {
        throw FormatError("weights: bad dims '" + dims + "' for " + name);
      }
      e.shape.push_back(v);
    }
  }
  return e;
}

}  // namespace

std::string precision_name(WeightPrecision p) { return p == WeightPrecision::Float32 ? "fp32" : "int8"; }

WeightPrecision parse_precision(const std::string& name) {
  if (name == "fp32") return WeightPrecision::Float32;
  if (name == "int8") return WeightPrecision::Int8;
  throw InvalidInput("unknown weight precision '" + name + "' (expected fp32 or int8)");
}

std::vector<std::uint8_t> serialize_weights(const Model<float>& model, WeightPrecision precision) {
  const auto& params = model.parameters();
  std::vector<float> scales;
  std::string header = std::string(kMagic) + "\n" + model.config().to_json() + "\n" + std::to_string(params.size()) + "\n";
  for (const auto& p : params) {
    const float scale = precision == WeightPrecision::Int8 ? int8_scale(p.tensor.values()) : 1.0f;
    scales.push_back(scale);
    header += p.name + " " + precision_name(precision) + " " + float_str(scale) + " " + dims_str(p.tensor.shape()) + "\n";
  }
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto values = params[i].tensor.values();
    if (precision == WeightPrecision::Float32) {
      const auto* raw = reinterpret_cast<const std::uint8_t*>(values.data());
      out.insert(out.end(), raw, raw + values.size() * sizeof(float));
    } else {
      for (float v : values) {
        const long q = std::clamp(std::lround(v / scales[i]), -127L, 127L);
        out.push_back(static_cast<std::uint8_t>(static_cast<std::int8_t>(q)));
      }
    }
  }
  const std::uint32_t crc = crc32_of(out);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(crc >> (8 * b)));
  return out;
}

Model<float> deserialize_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("weights: blob too short");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored = 0;
  for (int b = 0; b < 4; ++b) stored |= static_cast<std::uint32_t>(bytes[body.size() + b]) << (8 * b);
  if (crc32_of(body) != stored) throw FormatError("weights: checksum mismatch");

  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto* begin = body.data() + pos;
    const auto* nl = static_cast<const std::uint8_t*>(std::memchr(begin, '\n', body.size() - pos));
    if (nl == nullptr) throw FormatError("weights: truncated header");
    std::string line(reinterpret_cast<const char*>(begin), static_cast<std::size_t>(nl - begin));
    pos += line.size() + 1;
    return line;
  };
  if (next_line() != kMagic) throw FormatError("weights: bad magic");
  const ModelConfig config = ModelConfig::from_json(next_line());
  const std::string count_line = next_line();
  std::size_t count = 0;
  auto r = std::from_chars(count_line.data(), count_line.data() + count_line.size(), count);
  if (r.ec != std::errc() || r.ptr != count_line.data() + count_line.size()) {
    throw FormatError("weights: bad entry count");
  }

  Model<float> model(config);
  auto& params = model.parameters();
  if (count != params.size()) {
    throw FormatError("weights: blob has " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  std::vector<EntryLine> entries;
  for (std::size_t i = 0; i < count; ++i) {
    auto e = parse_entry(next_line());
    if (e.name != params[i].name) throw FormatError("weights: expected " + params[i].name + ", found " + e.name);
    if (e.shape != params[i].tensor.shape()) {
      throw FormatError("weights: " + e.name + " has shape " + shape_str(e.shape) + ", model expects " +
                        shape_str(params[i].tensor.shape()));
    }
    entries.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < count; ++i) {
    auto dst = params[i].tensor.values();
    const std::size_t width = entries[i].precision == WeightPrecision::Float32 ? sizeof(float) : 1;
    if (body.size() - pos < dst.size() * width) throw FormatError("weights: truncated data for " + entries[i].name);
    if (width == sizeof(float)) {
      std::memcpy(dst.data(), body.data() + pos, dst.size() * sizeof(float));
    } else {
      for (std::size_t k = 0; k < dst.size(); ++k) {
        dst[k] = static_cast<float>(static_cast<std::int8_t>(body[pos + k])) * entries[i].scale;
      }
    }
    pos += dst.size() * width;
  }
  if (pos != body.size()) throw FormatError("weights: trailing bytes after tensor data");
  return model;
}

void save_weights(const std::filesystem::path& path, const Model<float>& model, WeightPrecision precision) {
  write_file_atomic(path, serialize_weights(model, precision));
}

Model<float> load_weights(const std::filesystem::path& path) { return deserialize_weights(read_file(path)); }

WeightsSummary summarize_weights(const Model<float>& model) {
  return {model.parameter_count(), serialize_weights(model, WeightPrecision::Float32).size(),
          serialize_weights(model, WeightPrecision::Int8).size()};
}

}  // namespace odssd
