// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gpic {

// 8-bit raster image, row-major, interleaved samples.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 = gray, 3 = RGB, 4 = RGBA
  std::vector<std::uint8_t> data;

  std::size_t sample_count() const {
    return static_cast<std::size_t>(width) * height * channels;
  }
  std::uint8_t& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

ImageBuffer make_image(int width, int height, int channels, std::uint8_t fill = 0);

// Whole-file helpers. Writes go to a temp file in the same directory and are
// renamed into place so readers never observe a partial file.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::uint8_t* data, std::size_t size);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

// PNG, 8-bit only, color types gray/RGB/RGBA, no interlacing. The decoder
// handles all five scanline filters; the encoder always emits filter 0.
ImageBuffer decode_png(const std::uint8_t* bytes, std::size_t size);
std::vector<std::uint8_t> encode_png(const ImageBuffer& img);

// Binary PNM: P5 (gray) and P6 (RGB), maxval 255.
ImageBuffer decode_pnm(const std::uint8_t* bytes, std::size_t size);
std::vector<std::uint8_t> encode_pnm(const ImageBuffer& img);

// Dispatch on content (load) or extension .png/.ppm/.pgm (save).
ImageBuffer load_image(const std::filesystem::path& path);
void save_image_file(const ImageBuffer& img, const std::filesystem::path& path);

// Deterministic resampling. Box averages the covered source area and is the
// right choice for downscaling; nearest picks one source pixel.
ImageBuffer resize_nearest(const ImageBuffer& img, int width, int height);
ImageBuffer resize_box(const ImageBuffer& img, int width, int height);

}  // namespace gpic
