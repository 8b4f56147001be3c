#include <doctest.h>

#include <cstdlib>

#include "odssd/error.hpp"
#include "odssd/image.hpp"
#include "odssd/rng.hpp"

using namespace odssd;

namespace {

Image noise(int w, int h, int c, std::uint64_t seed) {
  Image img(w, h, c);
  SplitMix64 rng(seed);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST_SUITE("image") {
  TEST_CASE("png round trips") {
    for (int c : {1, 3}) {
      const auto img = noise(17, 9, c, static_cast<std::uint64_t>(c));
      CHECK(decode_image(encode_png(img)) == img);
    }
  }

  TEST_CASE("jpeg decodes close to the source") {
    Image img(32, 16, 3);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 32; ++x)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(x * 6 + c * 20);
    const auto back = decode_image(encode_jpeg(img, 95));
    REQUIRE(back.width == 32);
    REQUIRE(back.height == 16);
    REQUIRE(back.channels == 3);
    double err = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) err += std::abs(int(img.pixels[i]) - int(back.pixels[i]));
    CHECK(err / static_cast<double>(img.pixels.size()) < 4.0);
  }

  TEST_CASE("16-bit png") {
    Image16 raw{4, 2, {0, 1, 256, 65535, 12800, 7, 8, 9}};
    const auto back = decode_png16(encode_png16(raw));
    CHECK(back.width == 4);
    CHECK(back.pixels == raw.pixels);
    CHECK_THROWS_AS(decode_png16(encode_png(Image(2, 2, 3))), FormatError);
  }

  TEST_CASE("garbage is rejected") {
    const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
    CHECK_THROWS_AS(decode_image(junk), FormatError);
    auto png = encode_png(noise(8, 8, 3, 1));
    png.resize(png.size() / 2);
    CHECK_THROWS_AS(decode_image(png), FormatError);
    CHECK_THROWS_AS(read_file("/nonexistent/odssd/file.png"), IoError);
  }
}
