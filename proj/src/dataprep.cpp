// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include "gpic/dataprep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "gpic/rng.hpp"

namespace gpic {

namespace {

void check_nonempty(const ImageBuffer& img, const char* who) {
  if (img.width <= 0 || img.height <= 0)
    throw std::invalid_argument(std::string(who) + ": empty image");
}

}  // namespace

ImageBuffer to_grayscale(const ImageBuffer& img) {
  check_nonempty(img, "to_grayscale");
  if (img.channels == 1) return img;
  if (img.channels != 3 && img.channels != 4)
    throw std::invalid_argument("to_grayscale: unsupported channel count " +
                                std::to_string(img.channels));
  ImageBuffer out = make_image(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double luma = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) +
                          0.114 * img.at(x, y, 2);
      out.at(x, y, 0) = static_cast<std::uint8_t>(std::lround(luma));
    }
  return out;
}

ImageBuffer dilate_max(const ImageBuffer& gray, int radius) {
  check_nonempty(gray, "dilate_max");
  if (gray.channels != 1)
    throw std::invalid_argument("dilate_max: expected a single-channel image");
  if (radius < 0) throw std::invalid_argument("dilate_max: negative radius");
  ImageBuffer out = make_image(gray.width, gray.height, 1);
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x) {
      std::uint8_t best = 0;
      const int y0 = std::max(0, y - radius), y1 = std::min(gray.height - 1, y + radius);
      const int x0 = std::max(0, x - radius), x1 = std::min(gray.width - 1, x + radius);
      for (int yy = y0; yy <= y1; ++yy)
        for (int xx = x0; xx <= x1; ++xx) best = std::max(best, gray.at(xx, yy, 0));
      out.at(x, y, 0) = best;
    }
  return out;
}

ImageBuffer extract_line(const ImageBuffer& color, int dilation_radius) {
  check_nonempty(color, "extract_line");
  const ImageBuffer gray = to_grayscale(color);
  const ImageBuffer dilated = dilate_max(gray, dilation_radius);
  ImageBuffer out = make_image(gray.width, gray.height, 1);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<std::uint8_t>(255 - (dilated.data[i] - gray.data[i]));
  return out;
}

ImageBuffer simplify_stub(const ImageBuffer& line, std::optional<int> threshold) {
  check_nonempty(line, "simplify_stub");
  if (!threshold) return line;
  ImageBuffer out = line;
  for (auto& v : out.data) v = (v >= *threshold) ? 255 : 0;
  return out;
}

Tensor image_to_tensor(const ImageBuffer& img) {
  check_nonempty(img, "image_to_tensor");
  Tensor t = Tensor::zeros({img.channels, img.height, img.width});
  auto vals = t.values_mut();
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        vals[static_cast<std::size_t>((c * img.height + y) * img.width + x)] =
            static_cast<float>(img.at(x, y, c) / 127.5 - 1.0);
  return t;
}

ImageBuffer tensor_to_image(const Tensor& t) {
  if (!t.defined() || t.rank() != 3)
    throw std::invalid_argument("tensor_to_image: expected a (C, H, W) tensor");
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  if (c != 1 && c != 3 && c != 4)
    throw std::invalid_argument("tensor_to_image: unsupported channel count " +
                                std::to_string(c));
  ImageBuffer img = make_image(w, h, c);
  const auto vals = t.values();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = vals[static_cast<std::size_t>((ch * h + y) * w + x)];
        v = std::min(1.0, std::max(-1.0, v));
        img.at(x, y, ch) = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
      }
  return img;
}

Tensor load_normalized(const std::filesystem::path& path) {
  return image_to_tensor(load_image(path));
}

void save_image(const Tensor& t, const std::filesystem::path& path) {
  save_image_file(tensor_to_image(t), path);
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "gpic-dataset\tresolution=" << manifest.resolution << "\tsplit=" << manifest.split
      << "\n";
  for (const auto& [color, line] : manifest.pairs) out << color << "\t" << line << "\n";
  write_file_atomic(path, out.str());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("manifest: empty file " + path.string());
  DatasetManifest manifest;
  {
    std::istringstream hs(header);
    std::string tag, field;
    std::getline(hs, tag, '\t');
    if (tag != "gpic-dataset")
      throw std::runtime_error("manifest: bad header in " + path.string());
    while (std::getline(hs, field, '\t')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("manifest: malformed header field '" + field + "'");
      const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "resolution")
        manifest.resolution = std::stoi(value);
      else if (key == "split")
        manifest.split = value;
      else
        throw std::runtime_error("manifest: unknown header field '" + key + "'");
    }
  }
  if (manifest.resolution <= 0)
    throw std::runtime_error("manifest: missing resolution in " + path.string());
  const std::filesystem::path base = path.parent_path();
  std::string row;
  int line_no = 1;
  while (std::getline(in, row)) {
    ++line_no;
    if (row.empty()) continue;
    const auto tab = row.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("manifest: line " + std::to_string(line_no) +
                               " is not a tab-separated pair");
    const std::string color = row.substr(0, tab), line = row.substr(tab + 1);
    for (const auto& rel : {color, line})
      if (!std::filesystem::exists(base / rel))
        throw std::runtime_error("manifest: missing file " + (base / rel).string());
    manifest.pairs.emplace_back(color, line);
  }
  return manifest;
}

namespace {

struct Point {
  double x, y;
};

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point &a = poly[i], &b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x)
      in = !in;
  }
  return in;
}

void paint_shape(ImageBuffer& img, const std::vector<bool>& mask,
                 const std::array<std::uint8_t, 3>& fill) {
  const int w = img.width, h = img.height;
  const std::array<std::uint8_t, 3> edge = {static_cast<std::uint8_t>(fill[0] / 4),
                                            static_cast<std::uint8_t>(fill[1] / 4),
                                            static_cast<std::uint8_t>(fill[2] / 4)};
  auto at = [&](int x, int y) { return mask[static_cast<std::size_t>(y) * w + x]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!at(x, y)) continue;
      const bool boundary = x == 0 || x == w - 1 || y == 0 || y == h - 1 ||
                            !at(x - 1, y) || !at(x + 1, y) || !at(x, y - 1) || !at(x, y + 1);
      const auto& c = boundary ? edge : fill;
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[static_cast<std::size_t>(ch)];
    }
}

ImageBuffer render_synthetic(int resolution, const SynthesisOptions& options, Rng& rng) {
  ImageBuffer img = make_image(resolution, resolution, 3, 255);
  const double res = resolution;
  const int shapes = 2 + static_cast<int>(rng.uniform() * 3.0);
  for (int s = 0; s < shapes; ++s) {
    const auto& fill =
        options.palette[static_cast<std::size_t>(rng.uniform() * options.palette.size())];
    const double cx = (0.2 + 0.6 * rng.uniform()) * res;
    const double cy = (0.2 + 0.6 * rng.uniform()) * res;
    std::vector<bool> mask(static_cast<std::size_t>(resolution) * resolution, false);
    if (rng.uniform() < 0.5) {
      const double rx = (0.12 + 0.2 * rng.uniform()) * res;
      const double ry = (0.12 + 0.2 * rng.uniform()) * res;
      for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
          const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
          if (dx * dx + dy * dy <= 1.0)
            mask[static_cast<std::size_t>(y) * resolution + x] = true;
        }
    } else {
      const int verts = 3 + static_cast<int>(rng.uniform() * 3.0);
      const double base_r = (0.14 + 0.2 * rng.uniform()) * res;
      std::vector<Point> poly;
      for (int v = 0; v < verts; ++v) {
        const double angle = 2.0 * 3.14159265358979323846 * (v + 0.4 * rng.uniform()) / verts;
        const double r = base_r * (0.7 + 0.3 * rng.uniform());
        poly.push_back({cx + r * std::cos(angle), cy + r * std::sin(angle)});
      }
      for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x)
          if (inside_polygon(poly, x + 0.5, y + 0.5))
            mask[static_cast<std::size_t>(y) * resolution + x] = true;
    }
    paint_shape(img, mask, fill);
  }
  return img;
}

std::string numbered(const char* prefix, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", prefix, i, ext);
  return buf;
}

}  // namespace

DatasetManifest generate_synthetic(const SynthesisOptions& options,
                                   const std::filesystem::path& out_dir) {
  if (options.count < 1) throw std::invalid_argument("generate_synthetic: count must be >= 1");
  if (options.resolution < 4)
    throw std::invalid_argument("generate_synthetic: resolution must be >= 4");
  if (options.palette.empty())
    throw std::invalid_argument("generate_synthetic: empty palette");
  std::filesystem::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.resolution = options.resolution;
  for (int i = 0; i < options.count; ++i) {
    Rng rng(derive_seed(options.seed, seed_salt::kDataGen, static_cast<std::uint64_t>(i)));
    const ImageBuffer color = render_synthetic(options.resolution, options, rng);
    const ImageBuffer line = extract_line(color, options.dilation_radius);
    const std::string color_name = numbered("color", i, "png");
    const std::string line_name = numbered("line", i, "png");
    save_image_file(color, out_dir / color_name);
    save_image_file(line, out_dir / line_name);
    manifest.pairs.emplace_back(color_name, line_name);
  }
  save_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const std::filesystem::path base = manifest_path.parent_path();
  Dataset data;
  for (const auto& [color_rel, line_rel] : manifest.pairs) {
    TrainSample sample;
    sample.color = load_normalized(base / color_rel);
    sample.line = load_normalized(base / line_rel);
    if (sample.color.shape() != Shape{3, manifest.resolution, manifest.resolution})
      throw std::runtime_error("dataset: " + color_rel + " is not a 3-channel image at " +
                               std::to_string(manifest.resolution) + "x" +
                               std::to_string(manifest.resolution));
    if (sample.line.shape() != Shape{1, manifest.resolution, manifest.resolution})
      throw std::runtime_error("dataset: " + line_rel + " is not a 1-channel image at " +
                               std::to_string(manifest.resolution) + "x" +
                               std::to_string(manifest.resolution));
    data.push_back(std::move(sample));
  }
  return data;
}

}  // namespace gpic
