// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0
//
// Conditional noise predictor. A U-Net-style encoder digests the line
// drawing; the noisy image enters through a mirrored downsampling path; the
// decoder upsamples with transposed convolutions whose outputs are modulated
// (FiLM) by an embedding of the noise level alpha_bar, with skip connections
// from both the line encoder and the noisy-image path at each resolution.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gpic/tensor.hpp"

namespace gpic {

struct NetworkConfig {
  int C = 8;              // base channel width; levels use C * 2^i
  int depth = 4;          // number of downsampling levels
  int D = 64;             // Fourier feature count (embedding input is 2D wide)
  int image_size = 32;    // spatial resolution, must be divisible by 2^depth
  std::uint64_t fourier_seed = 1;

  int embed_width() const { return 4 * C; }
  int channels_at(int level) const { return C << level; }
  void validate() const;
};

// Per-level line-encoder activations, reusable across denoiser calls that
// share the same line input (the whole reverse chain does).
struct LineFeatures {
  std::vector<Tensor> levels;  // levels[i] at resolution image_size / 2^i
};

class DenoiserModel {
 public:
  // Parameters are initialized from param_seed; the Fourier vector b is drawn
  // from config.fourier_seed and never trained.
  DenoiserModel(NetworkConfig config, std::uint64_t param_seed);

  const NetworkConfig& config() const { return cfg_; }

  // Ordered (name, tensor) registry of trainable parameters. Tensors are
  // shared handles: mutating values through them updates the model.
  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  Tensor parameter(const std::string& name) const;
  std::int64_t parameter_count() const;

  const Tensor& fourier_b() const { return fourier_b_; }
  void set_fourier_b(const Tensor& b);

  // gamma(alpha_bar) = [cos(2 pi b alpha_bar), sin(2 pi b alpha_bar)], one row
  // per alpha_bar value; shape (N, 2D).
  Tensor fourier_embed(std::span<const double> alpha_bars) const;

  // Five-layer perceptron with mish over gamma; shape (N, E).
  Tensor embed(std::span<const double> alpha_bars) const;

  LineFeatures encode_line(const Tensor& line) const;

  // eps prediction; x_t (N,3,S,S), line (N,1,S,S), one alpha_bar per sample.
  Tensor predict_eps(const Tensor& x_t, std::span<const double> alpha_bars,
                     const Tensor& line) const;
  Tensor predict_eps(const Tensor& x_t, double alpha_bar, const Tensor& line) const;
  Tensor predict_eps_cached(const Tensor& x_t, double alpha_bar,
                            const LineFeatures& features) const;

 private:
  struct Conv {
    Tensor w, b;
    int stride = 1, pad = 0;
  };
  struct Linear {
    Tensor w, b;
  };

  Tensor predict_impl(const Tensor& x_t, std::span<const double> alpha_bars,
                      const LineFeatures& features) const;

  NetworkConfig cfg_;
  Tensor fourier_b_;                                       // (D)
  std::vector<std::pair<std::string, Tensor>> params_;

  Conv enc_stem_;
  std::vector<Conv> enc_down_;
  Conv x_stem_;
  std::vector<Conv> x_down_;
  Conv bottleneck_;
  std::vector<Linear> mlp_;
  std::vector<Linear> film_;                               // per decoder level, E -> 2*ch
  std::vector<Conv> dec_up_;                               // transposed convs
  std::vector<Conv> dec_fuse_;
  Conv head_;

  friend struct DenoiserBuilder;
};

}  // namespace gpic
