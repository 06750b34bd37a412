// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gpic/image.hpp"
#include "gpic/tensor.hpp"
#include "gpic/trainer.hpp"

namespace gpic {

// Rec. 601 luma; 1-channel input passes through, 4-channel drops alpha.
ImageBuffer to_grayscale(const ImageBuffer& img);

// Max filter over a (2 radius + 1)^2 square window, clamped at borders.
ImageBuffer dilate_max(const ImageBuffer& gray, int radius);

// Line-drawing extraction: grayscale, dilate, subtract, invert. The result is
// white except near transitions from bright to dark, which come out as dark
// strokes. Single channel, same spatial size as the input.
ImageBuffer extract_line(const ImageBuffer& color, int dilation_radius = 1);

// Placeholder for an external sketch-simplification stage. Identity when no
// threshold is given; otherwise binarizes (value >= threshold -> 255, else 0).
ImageBuffer simplify_stub(const ImageBuffer& line,
                          std::optional<int> threshold = std::nullopt);

// 8-bit image <-> float tensor in [-1, 1]. Saving clamps, then quantizes with
// round-half-away-from-zero, so save(load(f)) is byte-identical.
Tensor image_to_tensor(const ImageBuffer& img);
ImageBuffer tensor_to_image(const Tensor& t);
Tensor load_normalized(const std::filesystem::path& path);
void save_image(const Tensor& t, const std::filesystem::path& path);

// Tab-separated pair list with a one-line header; paths are relative to the
// manifest file.
struct DatasetManifest {
  int resolution = 0;
  std::string split = "train";
  std::vector<std::pair<std::string, std::string>> pairs;  // (color, line)
};

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
// Rejects malformed headers and missing files.
DatasetManifest load_manifest(const std::filesystem::path& path);

struct SynthesisOptions {
  int count = 0;
  int resolution = 32;
  std::uint64_t seed = 0;
  int dilation_radius = 1;
  // Fill colors for the layered shapes; outlines are the fills darkened.
  std::vector<std::array<std::uint8_t, 3>> palette = {
      {220, 60, 50}, {60, 90, 210}, {240, 190, 70}, {70, 180, 110}, {170, 80, 190}};
};

// Writes color_*.png, line_*.png, and manifest.tsv under out_dir. Image i
// depends only on (seed, i), so reruns are byte-identical and extending the
// count keeps existing images. Returns the manifest.
DatasetManifest generate_synthetic(const SynthesisOptions& options,
                                   const std::filesystem::path& out_dir);

// Loads every manifest pair as normalized tensors, validating channel counts
// and the common resolution.
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace gpic
