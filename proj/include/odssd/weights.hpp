#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "odssd/model.hpp"

namespace odssd {

enum class WeightPrecision { Float32, Int8 };

std::string precision_name(WeightPrecision p);
/// "fp32" or "int8"; throws InvalidInput otherwise.
WeightPrecision parse_precision(const std::string& name);

/// Blob layout: a text header
///
///   ODSSD-WEIGHTS 1
///   <model config JSON>
///   <entry count>
///   <name> <fp32|int8> <scale> <d0>x<d1>x...      (one line per tensor)
///
/// followed by the raw little-endian tensor data in entry order and a
/// little-endian CRC-32 of everything before it. int8 tensors store
/// round(w / scale) with scale = max|w| / 127 (1 for an all-zero tensor).
std::vector<std::uint8_t> serialize_weights(const Model<float>& model, WeightPrecision precision);

/// Rebuilds the model. Throws FormatError on a bad magic, checksum, entry
/// list or truncated data.
Model<float> deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const std::filesystem::path& path, const Model<float>& model, WeightPrecision precision);
Model<float> load_weights(const std::filesystem::path& path);

struct WeightsSummary {
  std::int64_t parameters = 0;
  std::size_t fp32_bytes = 0;
  std::size_t int8_bytes = 0;
};

/// Serialized sizes of both precisions for a model.
WeightsSummary summarize_weights(const Model<float>& model);

}  // namespace odssd
