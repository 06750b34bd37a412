// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gpic/network.hpp"
#include "gpic/tensor.hpp"

namespace gpic {

// Layered feature stack for the perceptual distance. Identity uses the raw
// pixels as a single layer without normalization; the other kinds unit-
// normalize the channel vector at every position before weighting.
class FeatureExtractor {
 public:
  enum class Kind { identity, random_conv, trained_encoder };

  static FeatureExtractor identity_features();
  // Frozen three-layer strided conv stack, weights drawn from the seed.
  static FeatureExtractor random_conv(std::uint64_t seed);
  // The denoiser's line encoder applied to each color channel separately,
  // concatenated per level. The model must outlive the extractor.
  static FeatureExtractor trained_encoder(const DenoiserModel& model);

  Kind kind() const { return kind_; }

  // Restrict the distance to these feature indices (empty = all layers).
  std::vector<int> layers;
  // Per selected layer, per channel weights (empty = all ones).
  std::vector<std::vector<float>> channel_weights;

  // Feature maps (1, C_l, H_l, W_l) for a (C, H, W) image.
  std::vector<Tensor> features(const Tensor& image) const;

 private:
  explicit FeatureExtractor(Kind kind) : kind_(kind) {}

  Kind kind_;
  const DenoiserModel* model_ = nullptr;
  std::vector<Tensor> conv_w_, conv_b_;
};

// Sum over layers of the position-averaged squared difference of weighted,
// normalized features. Nonnegative and symmetric; zero at identical inputs.
double perceptual_distance(const Tensor& a, const Tensor& b, const FeatureExtractor& fx);

constexpr std::size_t pair_count(std::size_t n) { return n * (n - 1) / 2; }

struct DistanceReport {
  std::vector<std::string> ids;     // one per image
  std::vector<double> distances;    // pairs (i, j), i < j, lexicographic
  std::vector<double> bin_edges;    // bins + 1 edges starting at 0
  std::vector<std::size_t> bin_counts;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
};

// All C(n, 2) pairwise distances plus a fixed-width histogram. Features are
// computed once per image. ids default to the image indices.
DistanceReport pairwise_report(const std::vector<Tensor>& images, const FeatureExtractor& fx,
                               int bins = 20, std::vector<std::string> ids = {});

// id_a,id_b,distance rows under a header line.
void write_report_csv(const DistanceReport& report, const std::filesystem::path& path);
// Histogram table with a summary comment line; columns lo hi count.
void write_histogram_text(const DistanceReport& report, const std::filesystem::path& path);
// Minimal deterministic bar chart.
std::string histogram_svg(const DistanceReport& report);

}  // namespace gpic
