// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "gpic/image.hpp"
#include "gpic/rng.hpp"

using namespace gpic;
namespace fs = std::filesystem;

namespace {

ImageBuffer random_image(int w, int h, int ch, std::uint64_t seed) {
  ImageBuffer img = make_image(w, h, ch);
  Rng rng(seed);
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

void put32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(std::uint8_t(x >> 24));
  v.push_back(std::uint8_t(x >> 16));
  v.push_back(std::uint8_t(x >> 8));
  v.push_back(std::uint8_t(x));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type,
               const std::vector<std::uint8_t>& payload) {
  put32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + at, static_cast<uInt>(payload.size() + 4));
  put32(out, crc);
}

int paeth_ref(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

// Builds a PNG by hand so we can choose the scanline filter per row and emit
// deliberately unsupported headers.
std::vector<std::uint8_t> build_png(int w, int h, int ch, const std::vector<std::uint8_t>& raw,
                                    const std::vector<int>& filters, int depth = 8,
                                    int color_type = -1, int interlace = 0) {
  if (color_type < 0) color_type = ch == 1 ? 0 : (ch == 3 ? 2 : 6);
  const std::size_t stride = static_cast<std::size_t>(w) * ch;
  std::vector<std::uint8_t> scan((stride + 1) * h, 0);
  for (int y = 0; y < h; ++y) {
    const int f = filters[static_cast<std::size_t>(y)];
    std::uint8_t* dst = scan.data() + static_cast<std::size_t>(y) * (stride + 1);
    dst[0] = static_cast<std::uint8_t>(f);
    const std::uint8_t* cur = raw.data() + static_cast<std::size_t>(y) * stride;
    const std::uint8_t* up = y > 0 ? cur - stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= std::size_t(ch) ? cur[i - ch] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= std::size_t(ch)) ? up[i - ch] : 0;
      int pred = 0;
      switch (f) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: pred = paeth_ref(a, b, c); break;
      }
      dst[1 + i] = static_cast<std::uint8_t>((cur[i] - pred) & 0xff);
    }
  }
  uLongf zlen = compressBound(static_cast<uLong>(scan.size()));
  std::vector<std::uint8_t> z(zlen);
  REQUIRE(compress2(z.data(), &zlen, scan.data(), static_cast<uLong>(scan.size()), 6) == Z_OK);
  z.resize(zlen);

  std::vector<std::uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<std::uint8_t> ihdr;
  put32(ihdr, static_cast<std::uint32_t>(w));
  put32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(static_cast<std::uint8_t>(depth));
  ihdr.push_back(static_cast<std::uint8_t>(color_type));
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(static_cast<std::uint8_t>(interlace));
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

}  // namespace

TEST_SUITE("image") {

TEST_CASE("png round trip for gray, rgb and rgba") {
  for (int ch : {1, 3, 4}) {
    ImageBuffer img = random_image(13, 7, ch, 100 + ch);
    auto bytes = encode_png(img);
    ImageBuffer back = decode_png(bytes.data(), bytes.size());
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.channels == ch);
    CHECK(back.data == img.data);
  }
}

TEST_CASE("png decoder inverts every scanline filter") {
  ImageBuffer img = random_image(6, 5, 3, 77);
  for (int f = 0; f <= 4; ++f) {
    auto bytes = build_png(img.width, img.height, 3, img.data, std::vector<int>(5, f));
    ImageBuffer back = decode_png(bytes.data(), bytes.size());
    CHECK_MESSAGE(back.data == img.data, "filter ", f);
  }
  // Mixed filters across rows.
  auto bytes = build_png(img.width, img.height, 3, img.data, {0, 1, 2, 3, 4});
  CHECK(decode_png(bytes.data(), bytes.size()).data == img.data);
}

TEST_CASE("png decoder rejects unsupported variants") {
  ImageBuffer img = random_image(4, 4, 3, 5);
  const std::vector<int> f(4, 0);
  auto palette = build_png(4, 4, 3, img.data, f, 8, /*color_type=*/3);
  CHECK_THROWS_WITH_AS(decode_png(palette.data(), palette.size()),
                       doctest::Contains("color type"), std::runtime_error);
  auto deep = build_png(4, 4, 3, img.data, f, /*depth=*/16);
  CHECK_THROWS_WITH_AS(decode_png(deep.data(), deep.size()), doctest::Contains("8-bit"),
                       std::runtime_error);
  auto laced = build_png(4, 4, 3, img.data, f, 8, 2, /*interlace=*/1);
  CHECK_THROWS_WITH_AS(decode_png(laced.data(), laced.size()), doctest::Contains("interlaced"),
                       std::runtime_error);
}

TEST_CASE("png decoder rejects corruption") {
  ImageBuffer img = random_image(8, 8, 3, 6);
  auto good = encode_png(img);
  // Flip one byte inside the IDAT payload: CRC must catch it.
  auto bad = good;
  bad[8 + 25 + 20] ^= 0x40;  // signature + IHDR chunk + a few bytes into IDAT
  CHECK_THROWS_AS(decode_png(bad.data(), bad.size()), std::runtime_error);
  // Drop the tail: truncated chunk or missing IEND.
  CHECK_THROWS_AS(decode_png(good.data(), good.size() - 9), std::runtime_error);
  // Not a PNG at all.
  const std::uint8_t junk[4] = {1, 2, 3, 4};
  CHECK_THROWS_AS(decode_png(junk, 4), std::runtime_error);
}

TEST_CASE("pnm round trip and header parsing") {
  for (int ch : {1, 3}) {
    ImageBuffer img = random_image(9, 4, ch, 200 + ch);
    auto bytes = encode_pnm(img);
    ImageBuffer back = decode_pnm(bytes.data(), bytes.size());
    CHECK(back.channels == ch);
    CHECK(back.data == img.data);
  }
  const std::string with_comment = "P5\n# a comment\n2 1\n255\n\x01\x02";
  ImageBuffer img = decode_pnm(reinterpret_cast<const std::uint8_t*>(with_comment.data()),
                               with_comment.size());
  CHECK(img.width == 2);
  CHECK(img.data[0] == 1);
  CHECK(img.data[1] == 2);
}

TEST_CASE("pnm decoder rejects bad headers and truncation") {
  const std::string deep = "P5\n2 1\n65535\n\x01\x02\x03\x04";
  CHECK_THROWS_AS(
      decode_pnm(reinterpret_cast<const std::uint8_t*>(deep.data()), deep.size()),
      std::runtime_error);
  const std::string truncated = "P6\n4 4\n255\nxx";
  CHECK_THROWS_AS(
      decode_pnm(reinterpret_cast<const std::uint8_t*>(truncated.data()), truncated.size()),
      std::runtime_error);
}

TEST_CASE("file save and load round trip with atomic writes") {
  const fs::path dir = fs::temp_directory_path() / "gpic_image_test";
  fs::create_directories(dir);
  ImageBuffer rgb = random_image(5, 6, 3, 9);
  ImageBuffer gray = random_image(5, 6, 1, 10);

  for (const char* name : {"a.png", "a.ppm"}) {
    const fs::path p = dir / name;
    save_image_file(rgb, p);
    ImageBuffer back = load_image(p);
    CHECK(back.data == rgb.data);
  }
  save_image_file(gray, dir / "g.pgm");
  CHECK(load_image(dir / "g.pgm").data == gray.data);

  CHECK_THROWS_AS(save_image_file(rgb, dir / "a.pgm"), std::runtime_error);
  CHECK_THROWS_AS(save_image_file(rgb, dir / "a.bmp"), std::runtime_error);
  CHECK_THROWS_AS(load_image(dir / "missing.png"), std::runtime_error);

  // No temp droppings left behind.
  for (const auto& e : fs::directory_iterator(dir))
    CHECK(e.path().string().find(".tmp") == std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("resize oracles") {
  // 4x4 gray ramp, box-averaged to 2x2.
  ImageBuffer img = make_image(4, 4, 1);
  for (int i = 0; i < 16; ++i) img.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i * 10);
  ImageBuffer half = resize_box(img, 2, 2);
  // Top-left block {0,10,40,50} averages to 25.
  CHECK(half.data[0] == 25);
  CHECK(half.data[1] == 45);
  CHECK(half.data[2] == 105);
  CHECK(half.data[3] == 125);

  ImageBuffer same = resize_nearest(img, 4, 4);
  CHECK(same.data == img.data);

  ImageBuffer dbl = resize_nearest(half, 4, 4);
  CHECK(dbl.data[0] == 25);
  CHECK(dbl.data[1] == 25);
  CHECK(dbl.data[4 + 0] == 25);
  CHECK(dbl.data[2] == 45);
}

}  // TEST_SUITE
