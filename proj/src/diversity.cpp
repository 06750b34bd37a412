// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include "gpic/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "gpic/image.hpp"
#include "gpic/ops.hpp"
#include "gpic/rng.hpp"

namespace gpic {

FeatureExtractor FeatureExtractor::identity_features() {
  return FeatureExtractor(Kind::identity);
}

FeatureExtractor FeatureExtractor::random_conv(std::uint64_t seed) {
  FeatureExtractor fx(Kind::random_conv);
  Rng rng(derive_seed(seed, seed_salt::kFeatures));
  const int widths[4] = {3, 8, 16, 32};
  for (int l = 0; l < 3; ++l) {
    const int cin = widths[l], cout = widths[l + 1];
    Tensor w = Tensor::zeros({cout, cin, 3, 3});
    rng.normal_fill(w.values_mut());
    const double std = std::sqrt(2.0 / (cin * 9));
    for (auto& v : w.values_mut()) v = static_cast<float>(v * std);
    fx.conv_w_.push_back(w);
    fx.conv_b_.push_back(Tensor::zeros({cout}));
  }
  return fx;
}

FeatureExtractor FeatureExtractor::trained_encoder(const DenoiserModel& model) {
  FeatureExtractor fx(Kind::trained_encoder);
  fx.model_ = &model;
  return fx;
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& image) const {
  if (!image.defined() || image.rank() != 3)
    throw std::invalid_argument("features: expected a (C, H, W) image");
  NoGradGuard guard;
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor x = reshape(image, {1, c, h, w});
  std::vector<Tensor> out;
  switch (kind_) {
    case Kind::identity:
      out.push_back(x);
      break;
    case Kind::random_conv: {
      if (c != 3) throw std::invalid_argument("features: conv extractor needs 3 channels");
      for (std::size_t l = 0; l < conv_w_.size(); ++l) {
        x = mish(conv2d(x, conv_w_[l], conv_b_[l], 2, 1));
        out.push_back(x);
      }
      break;
    }
    case Kind::trained_encoder: {
      if (c != 3) throw std::invalid_argument("features: encoder extractor needs 3 channels");
      std::vector<LineFeatures> per_channel;
      for (int ch = 0; ch < 3; ++ch) {
        Tensor plane = slice(x, 1, ch, 1);
        per_channel.push_back(model_->encode_line(plane));
      }
      const std::size_t levels = per_channel[0].levels.size();
      for (std::size_t l = 0; l < levels; ++l) {
        Tensor merged = concat_channels(
            concat_channels(per_channel[0].levels[l], per_channel[1].levels[l]),
            per_channel[2].levels[l]);
        out.push_back(merged);
      }
      break;
    }
  }
  return out;
}

namespace {

// Unit-normalize the channel vector at each spatial position.
void normalize_channelwise(Tensor& f) {
  const int c = f.dim(1), h = f.dim(2), w = f.dim(3);
  auto vals = f.values_mut();
  const int plane = h * w;
  for (int i = 0; i < plane; ++i) {
    double sq = 0;
    for (int ch = 0; ch < c; ++ch) {
      const double v = vals[static_cast<std::size_t>(ch * plane + i)];
      sq += v * v;
    }
    const double inv = 1.0 / (std::sqrt(sq) + 1e-10);
    for (int ch = 0; ch < c; ++ch) {
      float& v = vals[static_cast<std::size_t>(ch * plane + i)];
      v = static_cast<float>(v * inv);
    }
  }
}

std::vector<Tensor> prepared_features(const Tensor& image, const FeatureExtractor& fx) {
  std::vector<Tensor> feats = fx.features(image);
  std::vector<Tensor> picked;
  if (fx.layers.empty()) {
    picked = std::move(feats);
  } else {
    for (int idx : fx.layers) {
      if (idx < 0 || static_cast<std::size_t>(idx) >= feats.size())
        throw std::invalid_argument("perceptual_distance: layer index " + std::to_string(idx) +
                                    " out of range (have " + std::to_string(feats.size()) +
                                    " layers)");
      picked.push_back(feats[static_cast<std::size_t>(idx)]);
    }
  }
  if (fx.kind() != FeatureExtractor::Kind::identity)
    for (Tensor& f : picked) normalize_channelwise(f);
  if (!fx.channel_weights.empty() && fx.channel_weights.size() != picked.size())
    throw std::invalid_argument("perceptual_distance: have " +
                                std::to_string(fx.channel_weights.size()) +
                                " weight vectors for " + std::to_string(picked.size()) +
                                " layers");
  return picked;
}

double features_distance(const std::vector<Tensor>& fa, const std::vector<Tensor>& fb,
                         const FeatureExtractor& fx) {
  double total = 0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const Tensor &a = fa[l], &b = fb[l];
    if (a.shape() != b.shape())
      throw std::invalid_argument("perceptual_distance: feature shape mismatch at layer " +
                                  std::to_string(l));
    const int c = a.dim(1), h = a.dim(2), w = a.dim(3);
    const std::vector<float>* weights = nullptr;
    if (!fx.channel_weights.empty()) {
      weights = &fx.channel_weights[l];
      if (static_cast<int>(weights->size()) != c)
        throw std::invalid_argument("perceptual_distance: layer " + std::to_string(l) +
                                    " weight size " + std::to_string(weights->size()) +
                                    " does not match " + std::to_string(c) + " channels");
    }
    const auto av = a.values(), bv = b.values();
    double acc = 0;
    const int plane = h * w;
    for (int ch = 0; ch < c; ++ch) {
      const double wgt = weights ? (*weights)[static_cast<std::size_t>(ch)] : 1.0;
      for (int i = 0; i < plane; ++i) {
        const std::size_t k = static_cast<std::size_t>(ch * plane + i);
        const double d = wgt * (static_cast<double>(av[k]) - bv[k]);
        acc += d * d;
      }
    }
    total += acc / plane;
  }
  return total;
}

}  // namespace

double perceptual_distance(const Tensor& a, const Tensor& b, const FeatureExtractor& fx) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape())
    throw std::invalid_argument("perceptual_distance: image shape mismatch");
  return features_distance(prepared_features(a, fx), prepared_features(b, fx), fx);
}

DistanceReport pairwise_report(const std::vector<Tensor>& images, const FeatureExtractor& fx,
                               int bins, std::vector<std::string> ids) {
  if (images.size() < 2)
    throw std::invalid_argument("pairwise_report: need >= 2 images, got " +
                                std::to_string(images.size()));
  if (bins < 1) throw std::invalid_argument("pairwise_report: need >= 1 bins");
  if (!ids.empty() && ids.size() != images.size())
    throw std::invalid_argument("pairwise_report: id count does not match image count");

  DistanceReport report;
  if (ids.empty())
    for (std::size_t i = 0; i < images.size(); ++i) report.ids.push_back(std::to_string(i));
  else
    report.ids = std::move(ids);

  std::vector<std::vector<Tensor>> feats;
  feats.reserve(images.size());
  for (const Tensor& img : images) feats.push_back(prepared_features(img, fx));

  report.distances.reserve(pair_count(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = i + 1; j < images.size(); ++j)
      report.distances.push_back(features_distance(feats[i], feats[j], fx));

  const std::size_t n = report.distances.size();
  double sum = 0;
  double hi = 0;
  for (double d : report.distances) {
    sum += d;
    hi = std::max(hi, d);
  }
  report.mean = sum / static_cast<double>(n);
  double var = 0;
  for (double d : report.distances) var += (d - report.mean) * (d - report.mean);
  report.stddev = std::sqrt(var / static_cast<double>(n));

  if (hi <= 0.0) hi = 1.0;
  const double width = hi / bins;
  report.bin_counts.assign(static_cast<std::size_t>(bins), 0);
  for (int k = 0; k <= bins; ++k) report.bin_edges.push_back(width * k);
  for (double d : report.distances) {
    auto idx = static_cast<std::size_t>(d / width);
    idx = std::min(idx, static_cast<std::size_t>(bins - 1));
    ++report.bin_counts[idx];
  }
  return report;
}

void write_report_csv(const DistanceReport& report, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "id_a,id_b,distance\n";
  std::size_t k = 0;
  char buf[64];
  for (std::size_t i = 0; i < report.ids.size(); ++i)
    for (std::size_t j = i + 1; j < report.ids.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", report.distances[k++]);
      out << report.ids[i] << ',' << report.ids[j] << ',' << buf << '\n';
    }
  write_file_atomic(path, out.str());
}

void write_histogram_text(const DistanceReport& report, const std::filesystem::path& path) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "# pairs=%zu mean=%.9g stddev=%.9g\n",
                report.distances.size(), report.mean, report.stddev);
  out << buf;
  for (std::size_t b = 0; b < report.bin_counts.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %zu\n", report.bin_edges[b],
                  report.bin_edges[b + 1], report.bin_counts[b]);
    out << buf;
  }
  write_file_atomic(path, out.str());
}

std::string histogram_svg(const DistanceReport& report) {
  const int width = 480, height = 320, margin = 24;
  std::size_t peak = 1;
  for (std::size_t c : report.bin_counts) peak = std::max(peak, c);
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  const double plot_w = width - 2.0 * margin, plot_h = height - 2.0 * margin;
  const std::size_t bins = report.bin_counts.size();
  char buf[224];
  for (std::size_t b = 0; b < bins; ++b) {
    const double bw = plot_w / static_cast<double>(bins);
    const double x = margin + bw * static_cast<double>(b);
    const double h = plot_h * static_cast<double>(report.bin_counts[b]) /
                     static_cast<double>(peak);
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" "
                  "fill=\"steelblue\"/>\n",
                  x, margin + plot_h - h, bw * 0.9, h);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-size=\"12\">pairs=%zu mean=%.4g "
                "stddev=%.4g</text>\n",
                margin, margin - 8, report.distances.size(), report.mean, report.stddev);
  out << buf;
  out << "</svg>\n";
  return out.str();
}

}  // namespace gpic
