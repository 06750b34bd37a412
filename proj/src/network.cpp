// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include "gpic/network.hpp"

#include <cmath>

#include "gpic/ops.hpp"
#include "gpic/rng.hpp"

namespace gpic {

void NetworkConfig::validate() const {
  if (C < 1) tensor_fail("network config: C must be >= 1, got " + std::to_string(C));
  if (depth < 1) tensor_fail("network config: depth must be >= 1, got " + std::to_string(depth));
  if (D < 1) tensor_fail("network config: D must be >= 1, got " + std::to_string(D));
  const int div = 1 << depth;
  if (image_size < div || image_size % div != 0)
    tensor_fail("network config: image_size " + std::to_string(image_size) +
                " must be divisible by 2^depth = " + std::to_string(div));
}

namespace {

Tensor he_init(Shape shape, int fan_in, Rng& rng, double gain = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  const double std_dev = gain * std::sqrt(2.0 / fan_in);
  auto v = t.values_mut();
  for (auto& x : v) x = static_cast<float>(rng.normal() * std_dev);
  return t;
}

}  // namespace

// Builds layers and registers their parameters in a stable order. The
// registration order defines the initialization draw order, so it is part of
// the reproducibility contract.
struct DenoiserBuilder {
  DenoiserModel& m;
  Rng& rng;

  void reg(const std::string& name, const Tensor& t) { m.params_.emplace_back(name, t); }

  DenoiserModel::Conv conv(const std::string& name, int cin, int cout, int k, int stride,
                           int pad, double gain = 1.0, bool zero = false) {
    DenoiserModel::Conv c;
    c.w = zero ? Tensor::zeros({cout, cin, k, k}, true)
               : he_init({cout, cin, k, k}, cin * k * k, rng, gain);
    c.b = Tensor::zeros({cout}, true);
    c.stride = stride;
    c.pad = pad;
    reg(name + ".w", c.w);
    reg(name + ".b", c.b);
    return c;
  }

  DenoiserModel::Conv convT(const std::string& name, int cin, int cout, int k, int stride) {
    DenoiserModel::Conv c;
    c.w = he_init({cin, cout, k, k}, cin * k * k, rng);
    c.b = Tensor::zeros({cout}, true);
    c.stride = stride;
    c.pad = 0;
    reg(name + ".w", c.w);
    reg(name + ".b", c.b);
    return c;
  }

  DenoiserModel::Linear linear(const std::string& name, int din, int dout, double gain = 1.0) {
    DenoiserModel::Linear l;
    l.w = he_init({dout, din}, din, rng, gain);
    l.b = Tensor::zeros({dout}, true);
    reg(name + ".w", l.w);
    reg(name + ".b", l.b);
    return l;
  }
};

DenoiserModel::DenoiserModel(NetworkConfig config, std::uint64_t param_seed) : cfg_(config) {
  cfg_.validate();

  Rng brng(derive_seed(cfg_.fourier_seed, seed_salt::kFourierB));
  fourier_b_ = Tensor::zeros({cfg_.D});
  brng.normal_fill(fourier_b_.values_mut());

  Rng rng(derive_seed(param_seed, seed_salt::kParamInit));
  DenoiserBuilder b{*this, rng};
  const int E = cfg_.embed_width();

  enc_stem_ = b.conv("enc.stem", 1, cfg_.channels_at(0), 3, 1, 1);
  for (int i = 0; i < cfg_.depth; ++i)
    enc_down_.push_back(b.conv("enc.down" + std::to_string(i), cfg_.channels_at(i),
                               cfg_.channels_at(i + 1), 3, 2, 1));
  x_stem_ = b.conv("x.stem", 3, cfg_.channels_at(0), 3, 1, 1);
  for (int i = 0; i < cfg_.depth; ++i)
    x_down_.push_back(b.conv("x.down" + std::to_string(i), cfg_.channels_at(i),
                             cfg_.channels_at(i + 1), 3, 2, 1));
  bottleneck_ = b.conv("bottleneck", 2 * cfg_.channels_at(cfg_.depth), cfg_.channels_at(cfg_.depth),
                       3, 1, 1);

  mlp_.push_back(b.linear("mlp.0", 2 * cfg_.D, E));
  for (int i = 1; i < 5; ++i) mlp_.push_back(b.linear("mlp." + std::to_string(i), E, E));

  for (int i = cfg_.depth - 1; i >= 0; --i) {
    const std::string tag = std::to_string(i);
    dec_up_.push_back(b.convT("dec" + tag + ".up", cfg_.channels_at(i + 1), cfg_.channels_at(i), 2, 2));
    // FiLM producer: modest gain keeps early modulation close to identity
    // (its bias below supplies scale 1 / shift 0).
    Linear f = b.linear("film" + tag, E, 2 * cfg_.channels_at(i), 0.1);
    auto bias = f.b.values_mut();
    for (int c = 0; c < cfg_.channels_at(i); ++c) bias[static_cast<std::size_t>(c)] = 1.0f;
    film_.push_back(f);
    // Fuse input: line skip + x skip + upsampled decoder state, all at this level's width.
    dec_fuse_.push_back(b.conv("dec" + tag + ".fuse", 3 * cfg_.channels_at(i),
                               cfg_.channels_at(i), 3, 1, 1));
  }
  // Zero-initialized head: a fresh model predicts eps = 0.
  head_ = b.conv("head", cfg_.channels_at(0), 3, 3, 1, 1, 1.0, /*zero=*/true);
}

Tensor DenoiserModel::parameter(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  tensor_fail("model: no parameter named '" + name + "'");
}

std::int64_t DenoiserModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void DenoiserModel::set_fourier_b(const Tensor& b) {
  if (b.shape() != Shape{cfg_.D})
    tensor_fail("model: fourier vector must have shape [" + std::to_string(cfg_.D) + "], got " +
                shape_str(b.shape()));
  fourier_b_ = b.detached();
}

Tensor DenoiserModel::fourier_embed(std::span<const double> alpha_bars) const {
  const int n = static_cast<int>(alpha_bars.size());
  if (n < 1) tensor_fail("fourier_embed: need at least one alpha_bar");
  for (double a : alpha_bars)
    if (!(a >= 0.0) || a > 1.0)
      tensor_fail("fourier_embed: alpha_bar must lie in [0,1], got " + std::to_string(a));
  Tensor out = Tensor::zeros({n, 2 * cfg_.D});
  auto bv = fourier_b_.values();
  auto ov = out.values_mut();
  constexpr double two_pi = 6.283185307179586;
  for (int r = 0; r < n; ++r) {
    const double a = alpha_bars[static_cast<std::size_t>(r)];
    float* row = ov.data() + static_cast<std::ptrdiff_t>(r) * 2 * cfg_.D;
    for (int i = 0; i < cfg_.D; ++i) {
      const double phase = two_pi * static_cast<double>(bv[static_cast<std::size_t>(i)]) * a;
      row[i] = static_cast<float>(std::cos(phase));
      row[cfg_.D + i] = static_cast<float>(std::sin(phase));
    }
  }
  return out;
}

Tensor DenoiserModel::embed(std::span<const double> alpha_bars) const {
  Tensor h = fourier_embed(alpha_bars);
  for (std::size_t i = 0; i < mlp_.size(); ++i) {
    h = linear(h, mlp_[i].w, mlp_[i].b);
    if (i + 1 < mlp_.size()) h = mish(h);
  }
  return h;
}

LineFeatures DenoiserModel::encode_line(const Tensor& line) const {
  const Shape& s = line.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != cfg_.image_size || s[3] != cfg_.image_size)
    tensor_fail("encode_line: expected (N,1," + std::to_string(cfg_.image_size) + "," +
                std::to_string(cfg_.image_size) + "), got " + shape_str(s));
  LineFeatures f;
  Tensor h = mish(conv2d(line, enc_stem_.w, enc_stem_.b, enc_stem_.stride, enc_stem_.pad));
  f.levels.push_back(h);
  for (const Conv& c : enc_down_) {
    h = mish(conv2d(h, c.w, c.b, c.stride, c.pad));
    f.levels.push_back(h);
  }
  return f;
}

Tensor DenoiserModel::predict_impl(const Tensor& x_t, std::span<const double> alpha_bars,
                                   const LineFeatures& features) const {
  const Shape& s = x_t.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.image_size || s[3] != cfg_.image_size)
    tensor_fail("predict_eps: expected x_t (N,3," + std::to_string(cfg_.image_size) + "," +
                std::to_string(cfg_.image_size) + "), got " + shape_str(s));
  if (static_cast<int>(alpha_bars.size()) != s[0])
    tensor_fail("predict_eps: got " + std::to_string(alpha_bars.size()) + " alpha_bar values for " +
                std::to_string(s[0]) + " samples");
  if (features.levels.size() != static_cast<std::size_t>(cfg_.depth) + 1)
    tensor_fail("predict_eps: line features have " + std::to_string(features.levels.size()) +
                " levels, expected " + std::to_string(cfg_.depth + 1));
  if (features.levels[0].dim(0) != s[0])
    tensor_fail("predict_eps: line batch " + std::to_string(features.levels[0].dim(0)) +
                " does not match x_t batch " + std::to_string(s[0]));

  Tensor emb = embed(alpha_bars);  // (N, E)

  // The x path keeps a feature pyramid of its own: each decoder level needs
  // same-resolution access to the noisy image, since the residual it predicts
  // is spatially independent and cannot be recovered from the bottleneck alone.
  std::vector<Tensor> x_levels;
  Tensor h = mish(conv2d(x_t, x_stem_.w, x_stem_.b, x_stem_.stride, x_stem_.pad));
  x_levels.push_back(h);
  for (const Conv& c : x_down_) {
    h = mish(conv2d(h, c.w, c.b, c.stride, c.pad));
    x_levels.push_back(h);
  }

  h = concat_channels(features.levels.back(), h);
  h = mish(conv2d(h, bottleneck_.w, bottleneck_.b, bottleneck_.stride, bottleneck_.pad));

  for (int k = 0; k < cfg_.depth; ++k) {
    const int level = cfg_.depth - 1 - k;
    const int ch = cfg_.channels_at(level);
    h = conv_transpose2d(h, dec_up_[static_cast<std::size_t>(k)].w,
                         dec_up_[static_cast<std::size_t>(k)].b,
                         dec_up_[static_cast<std::size_t>(k)].stride, 0);
    Tensor sb = linear(emb, film_[static_cast<std::size_t>(k)].w, film_[static_cast<std::size_t>(k)].b);
    Tensor fs = slice(sb, 1, 0, ch);
    Tensor fb = slice(sb, 1, ch, ch);
    h = mish(channel_affine(h, fs, fb));
    h = concat_channels(features.levels[static_cast<std::size_t>(level)],
                        concat_channels(x_levels[static_cast<std::size_t>(level)], h));
    h = mish(conv2d(h, dec_fuse_[static_cast<std::size_t>(k)].w,
                    dec_fuse_[static_cast<std::size_t>(k)].b, 1, 1));
  }
  return conv2d(h, head_.w, head_.b, head_.stride, head_.pad);
}

Tensor DenoiserModel::predict_eps(const Tensor& x_t, std::span<const double> alpha_bars,
                                  const Tensor& line) const {
  return predict_impl(x_t, alpha_bars, encode_line(line));
}

Tensor DenoiserModel::predict_eps(const Tensor& x_t, double alpha_bar, const Tensor& line) const {
  std::vector<double> a(static_cast<std::size_t>(x_t.dim(0)), alpha_bar);
  return predict_eps(x_t, a, line);
}

Tensor DenoiserModel::predict_eps_cached(const Tensor& x_t, double alpha_bar,
                                         const LineFeatures& features) const {
  std::vector<double> a(static_cast<std::size_t>(x_t.dim(0)), alpha_bar);
  return predict_impl(x_t, a, features);
}

}  // namespace gpic
