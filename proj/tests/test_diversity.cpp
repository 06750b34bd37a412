// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gpic/diversity.hpp"
#include "gpic/image.hpp"
#include "gpic/rng.hpp"

using namespace gpic;
namespace fs = std::filesystem;

namespace {

Tensor random_image(int c, int size, std::uint64_t seed) {
  Tensor t = Tensor::zeros({c, size, size});
  Rng rng(seed);
  for (auto& v : t.values_mut()) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  return t;
}

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.C = 2;
  cfg.depth = 2;
  cfg.D = 8;
  cfg.image_size = 16;
  cfg.fourier_seed = 3;
  return cfg;
}

}  // namespace

TEST_SUITE("diversity") {

TEST_CASE("metric axioms hold for every extractor kind") {
  DenoiserModel model(tiny_config(), 90);
  const FeatureExtractor kinds[3] = {FeatureExtractor::identity_features(),
                                     FeatureExtractor::random_conv(5),
                                     FeatureExtractor::trained_encoder(model)};
  for (const auto& fx : kinds) {
    for (int pair = 0; pair < 50; ++pair) {
      Tensor a = random_image(3, 16, 1000 + static_cast<std::uint64_t>(pair));
      Tensor b = random_image(3, 16, 2000 + static_cast<std::uint64_t>(pair));
      const double dab = perceptual_distance(a, b, fx);
      const double dba = perceptual_distance(b, a, fx);
      REQUIRE(dab >= 0.0);
      REQUIRE(dab == dba);
      REQUIRE(perceptual_distance(a, a, fx) == 0.0);
    }
  }
}

TEST_CASE("identity extractor equals the brute-force pixel distance") {
  FeatureExtractor fx = FeatureExtractor::identity_features();
  // Hand case: 2x2, single channel difference pattern.
  Tensor a = Tensor::from_data({3, 2, 2}, {0.1f, 0.2f, 0.3f, 0.4f,  //
                                           0.0f, 0.0f, 0.0f, 0.0f,  //
                                           -1.0f, 1.0f, 0.5f, -0.5f});
  Tensor b = Tensor::from_data({3, 2, 2}, {0.1f, 0.2f, 0.3f, 0.0f,  //
                                           0.5f, 0.0f, 0.0f, 0.0f,  //
                                           -1.0f, 1.0f, 0.5f, 0.5f});
  // Squared diffs: 0.4^2 (c0), 0.5^2 (c1), 1.0^2 (c2), averaged over 4 positions.
  const double expected = (0.16 + 0.25 + 1.0) / 4.0;
  CHECK(perceptual_distance(a, b, fx) == doctest::Approx(expected).epsilon(1e-9));

  for (int rep = 0; rep < 10; ++rep) {
    Tensor x = random_image(3, 12, 3000 + static_cast<std::uint64_t>(rep));
    Tensor y = random_image(3, 12, 4000 + static_cast<std::uint64_t>(rep));
    double brute = 0;
    for (std::size_t i = 0; i < x.values().size(); ++i) {
      const double d = static_cast<double>(x.values()[i]) - y.values()[i];
      brute += d * d;
    }
    brute /= 12.0 * 12.0;
    CHECK(perceptual_distance(x, y, fx) == doctest::Approx(brute).epsilon(1e-6));
  }
}

TEST_CASE("channel weights scale the identity distance quadratically") {
  Tensor a = random_image(3, 8, 51);
  Tensor b = random_image(3, 8, 52);
  FeatureExtractor fx = FeatureExtractor::identity_features();
  const double base = perceptual_distance(a, b, fx);
  fx.channel_weights = {{2.0f, 2.0f, 2.0f}};
  CHECK(perceptual_distance(a, b, fx) == doctest::Approx(4.0 * base).epsilon(1e-9));
  fx.channel_weights = {{0.0f, 0.0f, 0.0f}};
  CHECK(perceptual_distance(a, b, fx) == 0.0);
  fx.channel_weights = {{1.0f, 1.0f}};
  CHECK_THROWS_AS(perceptual_distance(a, b, fx), std::invalid_argument);
}

TEST_CASE("random conv extractor is seed-deterministic") {
  Tensor a = random_image(3, 16, 61);
  Tensor b = random_image(3, 16, 62);
  FeatureExtractor f1 = FeatureExtractor::random_conv(9);
  FeatureExtractor f2 = FeatureExtractor::random_conv(9);
  FeatureExtractor f3 = FeatureExtractor::random_conv(10);
  CHECK(perceptual_distance(a, b, f1) == perceptual_distance(a, b, f2));
  CHECK(perceptual_distance(a, b, f1) != perceptual_distance(a, b, f3));
  CHECK(f1.features(a).size() == 3);
  CHECK(f1.features(a)[0].shape() == Shape{1, 8, 8, 8});
  CHECK(f1.features(a)[2].shape() == Shape{1, 32, 2, 2});
}

TEST_CASE("trained encoder features concatenate the channel runs") {
  DenoiserModel model(tiny_config(), 91);
  FeatureExtractor fx = FeatureExtractor::trained_encoder(model);
  Tensor img = random_image(3, 16, 63);
  auto feats = fx.features(img);
  REQUIRE(feats.size() == 3);  // depth + 1 levels
  CHECK(feats[0].shape() == Shape{1, 6, 16, 16});
  CHECK(feats[1].shape() == Shape{1, 12, 8, 8});
  CHECK(feats[2].shape() == Shape{1, 24, 4, 4});
  Tensor other = random_image(3, 16, 64);
  CHECK(perceptual_distance(img, other, fx) > 0.0);
}

TEST_CASE("layer subsets restrict the distance") {
  Tensor a = random_image(3, 16, 71);
  Tensor b = random_image(3, 16, 72);
  FeatureExtractor fx = FeatureExtractor::random_conv(4);
  const double all = perceptual_distance(a, b, fx);
  fx.layers = {0};
  const double first = perceptual_distance(a, b, fx);
  fx.layers = {1, 2};
  const double rest = perceptual_distance(a, b, fx);
  CHECK(all == doctest::Approx(first + rest).epsilon(1e-9));
  fx.layers = {7};
  CHECK_THROWS_AS(perceptual_distance(a, b, fx), std::invalid_argument);
}

TEST_CASE("pairwise report counts and histogram mass") {
  FeatureExtractor fx = FeatureExtractor::identity_features();
  std::vector<Tensor> three = {random_image(3, 8, 81), random_image(3, 8, 82),
                               random_image(3, 8, 83)};
  DistanceReport r3 = pairwise_report(three, fx, 10);
  CHECK(r3.distances.size() == 3);
  std::size_t mass = 0;
  for (auto c : r3.bin_counts) mass += c;
  CHECK(mass == 3);
  CHECK(r3.bin_edges.size() == 11);
  CHECK(r3.bin_edges.front() == 0.0);
  CHECK(r3.mean > 0.0);

  std::vector<Tensor> twins = {three[0], three[0]};
  DistanceReport r2 = pairwise_report(twins, fx, 5);
  REQUIRE(r2.distances.size() == 1);
  CHECK(r2.distances[0] == 0.0);
  CHECK(r2.bin_counts[0] == 1);
  for (std::size_t b = 1; b < r2.bin_counts.size(); ++b) CHECK(r2.bin_counts[b] == 0);

  std::vector<Tensor> one = {three[0]};
  CHECK_THROWS_AS(pairwise_report(one, fx, 5), std::invalid_argument);
}

TEST_CASE("216 tiny images make 23220 pairs") {
  CHECK(pair_count(216) == 23220);
  FeatureExtractor fx = FeatureExtractor::identity_features();
  std::vector<Tensor> many;
  for (int i = 0; i < 216; ++i)
    many.push_back(random_image(3, 4, 9000 + static_cast<std::uint64_t>(i)));
  DistanceReport report = pairwise_report(many, fx, 16);
  CHECK(report.distances.size() == 23220);
  std::size_t mass = 0;
  for (auto c : report.bin_counts) mass += c;
  CHECK(mass == 23220);
}

TEST_CASE("report files are deterministic and well formed") {
  const fs::path dir = fs::temp_directory_path() / "gpic_report";
  fs::remove_all(dir);
  fs::create_directories(dir);
  FeatureExtractor fx = FeatureExtractor::random_conv(3);
  std::vector<Tensor> images = {random_image(3, 16, 91), random_image(3, 16, 92),
                                random_image(3, 16, 93), random_image(3, 16, 94)};
  DistanceReport report = pairwise_report(images, fx, 8, {"a", "b", "c", "d"});
  write_report_csv(report, dir / "pairs.csv");
  write_histogram_text(report, dir / "hist.txt");

  std::ifstream csv(dir / "pairs.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "id_a,id_b,distance");
  int rows = 0;
  while (std::getline(csv, line)) {
    CHECK(line.find(',') != std::string::npos);
    ++rows;
  }
  CHECK(rows == 6);

  std::ifstream hist(dir / "hist.txt");
  std::getline(hist, line);
  CHECK(line.find("# pairs=6 mean=") != std::string::npos);
  rows = 0;
  while (std::getline(hist, line)) ++rows;
  CHECK(rows == 8);

  DistanceReport again = pairwise_report(images, fx, 8, {"a", "b", "c", "d"});
  write_report_csv(again, dir / "pairs2.csv");
  CHECK(read_file(dir / "pairs.csv") == read_file(dir / "pairs2.csv"));

  const std::string svg = histogram_svg(report);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("rect") != std::string::npos);
  CHECK(svg.find("pairs=6") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("shape mismatches are rejected") {
  FeatureExtractor fx = FeatureExtractor::identity_features();
  Tensor a = random_image(3, 8, 95);
  Tensor b = random_image(3, 10, 96);
  CHECK_THROWS_AS(perceptual_distance(a, b, fx), std::invalid_argument);
  FeatureExtractor conv = FeatureExtractor::random_conv(1);
  Tensor gray = random_image(1, 8, 97);
  CHECK_THROWS_AS(perceptual_distance(gray, gray, conv), std::invalid_argument);
}

}  // TEST_SUITE
