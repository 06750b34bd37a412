// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0
//
// Noise schedule for the diffusion process. Training draws the noise level
// from a continuous curve; sampling walks a discrete ladder of T steps whose
// endpoints match that curve.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gpic/rng.hpp"
#include "gpic/tensor.hpp"

namespace gpic {

// Discrete ladder of per-step coefficients. Index 0 is the clean-image end:
// alpha_bar[0] = 1, and alpha/beta/sigma[0] are padding so that step t lives
// at index t. Immutable after construction; safe to share across threads.
struct Schedule {
  int T = 0;
  double lambda = 0.0;
  std::vector<double> alpha_bar;  // size T+1, strictly decreasing from 1
  std::vector<double> alpha;      // size T+1, alpha[t] = alpha_bar[t]/alpha_bar[t-1]
  std::vector<double> beta;       // size T+1, beta[t] = 1 - alpha[t]
  std::vector<double> sigma;      // size T+1, sigma[t]^2 = (1-abar[t-1])/(1-abar[t]) * beta[t]
};

// alpha_bar(u) = exp(-(lambda*u)^2), the continuous noise-level curve on [0,1].
inline double alpha_bar_at(double lambda, double u) {
  const double s = lambda * u;
  return std::exp(-s * s);
}

// Draws a training noise level: u ~ U[0,1), alpha_bar = exp(-(lambda*u)^2).
// Result lies in (exp(-lambda^2), 1].
inline double sample_alpha_bar(double lambda, Rng& rng) {
  return alpha_bar_at(lambda, rng.uniform());
}

// Builds the discrete ladder alpha_bar[t] = exp(-(lambda*t/T)^2) so that
// alpha_bar[0] = 1 and alpha_bar[T] = exp(-lambda^2).
inline Schedule build_schedule(int T, double lambda) {
  if (T < 1) tensor_fail("build_schedule: T must be >= 1, got " + std::to_string(T));
  if (!(lambda > 0.0)) tensor_fail("build_schedule: lambda must be > 0");
  Schedule s;
  s.T = T;
  s.lambda = lambda;
  s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
  s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.sigma.assign(static_cast<std::size_t>(T) + 1, 0.0);
  for (int t = 0; t <= T; ++t)
    s.alpha_bar[static_cast<std::size_t>(t)] = alpha_bar_at(lambda, static_cast<double>(t) / T);
  for (int t = 1; t <= T; ++t) {
    const std::size_t i = static_cast<std::size_t>(t);
    s.alpha[i] = s.alpha_bar[i] / s.alpha_bar[i - 1];
    s.beta[i] = 1.0 - s.alpha[i];
    // At t = 1 the numerator 1 - alpha_bar[0] is exactly zero, so sigma[1] = 0.
    s.sigma[i] = std::sqrt((1.0 - s.alpha_bar[i - 1]) / (1.0 - s.alpha_bar[i]) * s.beta[i]);
  }
  return s;
}

template <class S>
struct ForwardSample {
  TensorT<S> x_t;   // noised image
  TensorT<S> eps;   // the noise that was mixed in (the training target)
};

// Closed-form forward diffusion: x_t = sqrt(abar)*x0 + sqrt(1-abar)*eps with
// eps ~ N(0, I). Returns both the noised tensor and the noise itself.
template <class S>
ForwardSample<S> forward_sample(const TensorT<S>& x0, double alpha_bar, Rng& rng) {
  if (!(alpha_bar > 0.0) || alpha_bar > 1.0)
    tensor_fail("forward_sample: alpha_bar must lie in (0,1], got " + std::to_string(alpha_bar));
  const S a = static_cast<S>(std::sqrt(alpha_bar));
  const S b = static_cast<S>(std::sqrt(1.0 - alpha_bar));
  TensorT<S> eps = TensorT<S>::zeros(x0.shape());
  rng.normal_fill(eps.values_mut());
  TensorT<S> xt = TensorT<S>::zeros(x0.shape());
  auto x0v = x0.values();
  auto ev = eps.values();
  auto xv = xt.values_mut();
  for (std::size_t i = 0; i < xv.size(); ++i) xv[i] = a * x0v[i] + b * ev[i];
  return {std::move(xt), std::move(eps)};
}

}  // namespace gpic
