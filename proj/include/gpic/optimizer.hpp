// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0
//
// Rectified Adam with LookAhead slow weights. The variance-rectification
// term is gated on the SMA length rho_t: while rho_t is at or below the
// threshold the update falls back to bias-corrected momentum without the
// second-moment denominator.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gpic/tensor.hpp"

namespace gpic {

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double lookahead_alpha = 0.5;
  int lookahead_k = 6;
  int n_sma_threshold = 5;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-5;
  double weight_decay = 0.0;

  void validate() const {
    if (!(learning_rate > 0)) tensor_fail("optimizer: learning_rate must be > 0");
    if (!(lookahead_alpha > 0) || lookahead_alpha > 1)
      tensor_fail("optimizer: lookahead_alpha must be in (0,1]");
    if (lookahead_k < 1) tensor_fail("optimizer: lookahead_k must be >= 1");
    if (!(beta1 > 0) || beta1 >= 1 || !(beta2 > 0) || beta2 >= 1)
      tensor_fail("optimizer: betas must lie in (0,1)");
    if (!(eps > 0)) tensor_fail("optimizer: eps must be > 0");
    if (weight_decay < 0) tensor_fail("optimizer: weight_decay must be >= 0");
  }
};

template <class S>
class RangerT {
 public:
  RangerT(std::vector<TensorT<S>> params, OptimizerConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    slow_.reserve(params_.size());
    for (auto& p : params_) {
      m_.emplace_back(p.values().size(), S(0));
      v_.emplace_back(p.values().size(), S(0));
      slow_.emplace_back(p.values().begin(), p.values().end());
    }
  }

  std::int64_t step_count() const { return step_; }
  std::size_t param_count() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) {
      p.grad_mut();
      p.zero_grad();
    }
  }

  // One update from the gradients currently stored on the parameters.
  void step() {
    const std::int64_t t = ++step_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double b1t = std::pow(b1, static_cast<double>(t));
    const double b2t = std::pow(b2, static_cast<double>(t));
    const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    const double rho_t = rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
    const bool rectified = rho_t > static_cast<double>(cfg_.n_sma_threshold);
    double step_size;
    if (rectified) {
      step_size = std::sqrt((1.0 - b2t) * (rho_t - 4.0) / (rho_inf - 4.0) * (rho_t - 2.0) /
                            rho_t * rho_inf / (rho_inf - 2.0)) /
                  (1.0 - b1t);
    } else {
      step_size = 1.0 / (1.0 - b1t);
    }
    const double lr = cfg_.learning_rate;

    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto vals = params_[k].values_mut();
      auto grads = params_[k].grad_mut();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
        const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        double update = lr * step_size * mi;
        if (rectified) update /= std::sqrt(vi) + cfg_.eps;
        double p = static_cast<double>(vals[i]);
        if (cfg_.weight_decay > 0) p -= lr * cfg_.weight_decay * p;
        vals[i] = static_cast<S>(p - update);
      }
      if (t % cfg_.lookahead_k == 0) {
        auto& slow = slow_[k];
        const double a = cfg_.lookahead_alpha;
        for (std::size_t i = 0; i < vals.size(); ++i) {
          const double s = static_cast<double>(slow[i]) +
                           a * (static_cast<double>(vals[i]) - static_cast<double>(slow[i]));
          slow[i] = static_cast<S>(s);
          vals[i] = static_cast<S>(s);
        }
      }
    }
  }

  // State access for checkpointing.
  const std::vector<S>& moment1(std::size_t k) const { return m_[k]; }
  const std::vector<S>& moment2(std::size_t k) const { return v_[k]; }
  const std::vector<S>& slow_weights(std::size_t k) const { return slow_[k]; }
  void restore(std::size_t k, std::vector<S> m, std::vector<S> v, std::vector<S> slow) {
    if (m.size() != m_[k].size() || v.size() != v_[k].size() || slow.size() != slow_[k].size())
      tensor_fail("optimizer: restored buffer size mismatch for parameter " + std::to_string(k));
    m_[k] = std::move(m);
    v_[k] = std::move(v);
    slow_[k] = std::move(slow);
  }
  void set_step_count(std::int64_t t) { step_ = t; }

 private:
  std::vector<TensorT<S>> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<S>> m_, v_, slow_;
  std::int64_t step_ = 0;
};

using Ranger = RangerT<float>;

}  // namespace gpic
