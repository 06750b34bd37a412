// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include "gpic/sampler.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "gpic/ops.hpp"

namespace gpic {

namespace {

double squared_norm(const Tensor& t) {
  double s = 0;
  for (float v : t.values()) s += static_cast<double>(v) * v;
  return s;
}

void check_step(int t, const Schedule& s, const char* who) {
  if (t < 1 || t > s.T)
    throw std::invalid_argument(std::string(who) + ": step t=" + std::to_string(t) +
                                " outside [1, " + std::to_string(s.T) + "]");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_finite(const Tensor& eps, int t) {
  for (float v : eps.values())
    if (!std::isfinite(v))
      throw std::runtime_error("sampler: non-finite noise prediction at step t=" +
                               std::to_string(t));
}

}  // namespace

std::size_t select_model_index(const SamplerRun& run, int t) {
  if (run.models.empty()) throw std::invalid_argument("sampler: empty model list");
  std::size_t pick = run.models.size();
  for (std::size_t i = 0; i < run.models.size(); ++i)
    if (run.models[i].from_t >= t) pick = i;
  if (pick == run.models.size())
    throw std::invalid_argument("sampler: no model covers step t=" + std::to_string(t));
  return pick;
}

Tensor init_state(const SamplerRun& run, Rng& rng) {
  if (!run.schedule) throw std::invalid_argument("sampler: missing schedule");
  if (!run.line.defined() || run.line.rank() != 3 || run.line.dim(0) != 1)
    throw std::invalid_argument("sampler: line image must have shape (1, H, W)");
  const int h = run.line.dim(1), w = run.line.dim(2);
  Tensor x = Tensor::zeros({1, 3, h, w});
  rng.normal_fill(x.values_mut());
  if (run.bias_color) {
    const auto& v = *run.bias_color;
    for (double c : v)
      if (!(c >= -1.0 && c <= 1.0))
        throw std::invalid_argument("sampler: bias color component " + std::to_string(c) +
                                    " outside [-1, 1]");
    const double abar_t = run.schedule->alpha_bar[static_cast<std::size_t>(run.schedule->T)];
    const double a = std::sqrt(abar_t), b = std::sqrt(1.0 - abar_t);
    auto vals = x.values_mut();
    const int plane = h * w;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < plane; ++i) {
        float& e = vals[static_cast<std::size_t>(c * plane + i)];
        e = static_cast<float>(a * v[static_cast<std::size_t>(c)] + b * e);
      }
  }
  return x;
}

Tensor predictor_math(const Tensor& x_t, const Tensor& eps, const Tensor& z, int t,
                      const Schedule& s) {
  check_step(t, s, "predictor");
  check_same_shape(x_t, eps, "predictor");
  check_same_shape(x_t, z, "predictor");
  const auto ti = static_cast<std::size_t>(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[ti]);
  const double eps_coeff = s.beta[ti] / std::sqrt(1.0 - s.alpha_bar[ti]);
  const double sigma = s.sigma[ti];
  Tensor out = Tensor::zeros(x_t.shape());
  auto ov = out.values_mut();
  const auto xv = x_t.values(), ev = eps.values(), zv = z.values();
  for (std::size_t i = 0; i < ov.size(); ++i)
    ov[i] = static_cast<float>((xv[i] - eps_coeff * ev[i]) * inv_sqrt_alpha + sigma * zv[i]);
  return out;
}

double corrector_math(Tensor& x, const Tensor& eps, const Tensor& z, int t,
                      const Schedule& s) {
  check_step(t, s, "corrector");
  check_same_shape(x, eps, "corrector");
  check_same_shape(x, z, "corrector");
  const double eps_sq = squared_norm(eps);
  if (eps_sq <= 0.0)
    throw std::invalid_argument("corrector: zero noise prediction, step size undefined");
  const auto ti = static_cast<std::size_t>(t);
  const double z_sq = squared_norm(z);
  const double step = 2.0 * s.alpha[ti] * z_sq / eps_sq;
  const double drift = step / std::sqrt(1.0 - s.alpha_bar[ti]);
  const double noise = std::sqrt(2.0 * step);
  auto xv = x.values_mut();
  const auto ev = eps.values(), zv = z.values();
  for (std::size_t i = 0; i < xv.size(); ++i)
    xv[i] = static_cast<float>(xv[i] - drift * ev[i] + noise * zv[i]);
  return step;
}

Tensor predictor_update(const Tensor& x_t, const Tensor& eps, int t, const Schedule& s,
                        Rng& rng) {
  Tensor z = Tensor::zeros(x_t.shape());
  if (t > 1) rng.normal_fill(z.values_mut());
  return predictor_math(x_t, eps, z, t, s);
}

bool corrector_update(Tensor& x, const Tensor& eps, int t, const Schedule& s, Rng& rng) {
  Tensor z = Tensor::zeros(x.shape());
  rng.normal_fill(z.values_mut());
  if (squared_norm(eps) <= 0.0) return false;
  corrector_math(x, eps, z, t, s);
  return true;
}

Tensor predictor_step(const DenoiserModel& model, const Tensor& x_t, int t,
                      const Schedule& s, const Tensor& line, Rng& rng) {
  check_step(t, s, "predictor");
  NoGradGuard guard;
  Tensor eps = model.predict_eps(x_t, s.alpha_bar[static_cast<std::size_t>(t)], line);
  check_finite(eps, t);
  return predictor_update(x_t, eps, t, s, rng);
}

bool corrector_step(const DenoiserModel& model, Tensor& x, int t, const Schedule& s,
                    const Tensor& line, Rng& rng) {
  check_step(t, s, "corrector");
  NoGradGuard guard;
  Tensor eps = model.predict_eps(x, s.alpha_bar[static_cast<std::size_t>(t)], line);
  check_finite(eps, t);
  return corrector_update(x, eps, t, s, rng);
}

void apply_mask(Tensor& x, const MaskedTarget& target) {
  const Tensor& rgb = target.v_rgb;
  const Tensor& alpha = target.v_alpha;
  if (!rgb.defined() || rgb.rank() != 3 || rgb.dim(0) != 3)
    throw std::invalid_argument("apply_mask: v_rgb must have shape (3, H, W)");
  const int h = rgb.dim(1), w = rgb.dim(2);
  if (!alpha.defined() || alpha.rank() != 3 || alpha.dim(0) != 1 || alpha.dim(1) != h ||
      alpha.dim(2) != w)
    throw std::invalid_argument("apply_mask: v_alpha must have shape (1, H, W) matching v_rgb");
  if (x.numel() != 3 * h * w)
    throw std::invalid_argument("apply_mask: state shape " + shape_str(x.shape()) +
                                " does not match mask " + shape_str(rgb.shape()));
  auto xv = x.values_mut();
  const auto rv = rgb.values(), av = alpha.values();
  const int plane = h * w;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < plane; ++i) {
      const std::size_t xi = static_cast<std::size_t>(c * plane + i);
      const float a = av[static_cast<std::size_t>(i)];
      xv[xi] = xv[xi] * (1.0f - a) + rv[xi] * a;
    }
}

namespace {

void validate_run(const SamplerRun& run) {
  if (!run.schedule) throw std::invalid_argument("sampler: missing schedule");
  const int t_max = run.schedule->T;
  if (!run.line.defined() || run.line.rank() != 3 || run.line.dim(0) != 1)
    throw std::invalid_argument("sampler: line image must have shape (1, H, W)");
  if (run.models.empty()) throw std::invalid_argument("sampler: empty model list");
  int prev = t_max + 1;
  for (std::size_t i = 0; i < run.models.size(); ++i) {
    const ModelStage& stage = run.models[i];
    if (!stage.model)
      throw std::invalid_argument("sampler: null model at stage " + std::to_string(i));
    if (stage.from_t < 1 || stage.from_t > t_max)
      throw std::invalid_argument("sampler: stage " + std::to_string(i) + " switch point " +
                                  std::to_string(stage.from_t) + " outside [1, " +
                                  std::to_string(t_max) + "]");
    if (stage.from_t >= prev)
      throw std::invalid_argument("sampler: switch points must be strictly decreasing");
    prev = stage.from_t;
  }
  if (run.models.front().from_t != t_max)
    throw std::invalid_argument("sampler: first stage must start at t=" +
                                std::to_string(t_max));
  if (run.corrector_iterations < 0)
    throw std::invalid_argument("sampler: corrector iterations must be >= 0");
  if (run.masked_target) {
    const MaskedTarget& mt = *run.masked_target;
    const int h = run.line.dim(1), w = run.line.dim(2);
    if (!mt.v_rgb.defined() || mt.v_rgb.shape() != Shape{3, h, w})
      throw std::invalid_argument("sampler: mask v_rgb must have shape (3, " +
                                  std::to_string(h) + ", " + std::to_string(w) + ")");
    if (!mt.v_alpha.defined() || mt.v_alpha.shape() != Shape{1, h, w})
      throw std::invalid_argument("sampler: mask v_alpha must have shape (1, " +
                                  std::to_string(h) + ", " + std::to_string(w) + ")");
    for (float a : mt.v_alpha.values())
      if (!(a >= 0.0f && a <= 1.0f))
        throw std::invalid_argument("sampler: mask alpha value " + std::to_string(a) +
                                    " outside [0, 1]");
  }
}

}  // namespace

Tensor sample(const SamplerRun& run) {
  validate_run(run);
  NoGradGuard guard;
  const Schedule& sched = *run.schedule;
  const int h = run.line.dim(1), w = run.line.dim(2);
  Rng rng(run.seed);
  Tensor x = init_state(run, rng);
  const Tensor line_batch = reshape(run.line, {1, 1, h, w});

  std::vector<LineFeatures> features(run.models.size());
  std::vector<bool> encoded(run.models.size(), false);

  for (int t = sched.T; t >= 1; --t) {
    if (run.masked_target) apply_mask(x, *run.masked_target);
    if (run.on_step_entry) run.on_step_entry(t, x);

    const std::size_t stage = select_model_index(run, t);
    const DenoiserModel& model = *run.models[stage].model;
    if (!encoded[stage]) {
      features[stage] = model.encode_line(line_batch);
      encoded[stage] = true;
    }
    const double abar_t = sched.alpha_bar[static_cast<std::size_t>(t)];

    Tensor eps = model.predict_eps_cached(x, abar_t, features[stage]);
    check_finite(eps, t);
    const double eps_norm = std::sqrt(squared_norm(eps));
    x = predictor_update(x, eps, t, sched, rng);

    int applied = 0;
    for (int n = 0; n < run.corrector_iterations; ++n) {
      Tensor eps_c = model.predict_eps_cached(x, abar_t, features[stage]);
      check_finite(eps_c, t);
      if (corrector_update(x, eps_c, t, sched, rng)) {
        ++applied;
      } else {
        std::fprintf(stderr, "warning: corrector skipped at t=%d, zero noise prediction\n", t);
      }
    }

    if (run.trace) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "{\"t\":%d,\"model\":%zu,\"eps_norm\":%.9g,\"correctors\":%d}\n",
                    t, stage, eps_norm, applied);
      *run.trace << buf;
    }
  }

  for (float& v : x.values_mut()) v = std::min(1.0f, std::max(-1.0f, v));
  if (run.masked_target) apply_mask(x, *run.masked_target);
  return reshape(x, {3, h, w});
}

}  // namespace gpic
