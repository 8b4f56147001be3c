#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace odssd {

/// 8-bit interleaved image (1 or 3 channels), row-major.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// 16-bit single-channel image, used for dense disparity ground truth.
struct Image16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Decodes 8-bit PNG (gray, RGB, RGBA, palette) or baseline JPEG, detected
/// by signature. Alpha is dropped; gray stays single-channel.
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> encode_jpeg(const Image& image, int quality = 95);

/// 16-bit grayscale PNG. decode throws FormatError for any other layout.
Image16 decode_png16(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png16(const Image16& image);

}  // namespace odssd
