// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "gpic/network.hpp"
#include "gpic/rng.hpp"
#include "gpic/schedule.hpp"
#include "gpic/tensor.hpp"

namespace gpic {

// Pins a region of the image during sampling. Where v_alpha is 1 the state is
// replaced by v_rgb at the top of every reverse step and in the final output;
// fractional alpha blends.
struct MaskedTarget {
  Tensor v_rgb;    // (3, H, W) in [-1, 1]
  Tensor v_alpha;  // (1, H, W) in [0, 1]
};

// One rung of the model ladder. A stage handles steps from from_t down to
// just above the next stage's from_t. from_t values must be strictly
// decreasing and the first must equal the schedule length T.
struct ModelStage {
  const DenoiserModel* model = nullptr;
  int from_t = 0;
};

struct SamplerRun {
  const Schedule* schedule = nullptr;
  std::vector<ModelStage> models;
  Tensor line;  // (1, S, S) in [-1, 1]
  std::uint64_t seed = 0;
  int corrector_iterations = 0;  // Langevin refinements per reverse step
  std::optional<std::array<double, 3>> bias_color;  // steers the x_T mean
  std::optional<MaskedTarget> masked_target;
  std::ostream* trace = nullptr;  // JSON lines, one per reverse step
  // Called after mask compositing at the top of each reverse step.
  std::function<void(int t, const Tensor& x)> on_step_entry;
};

// Index of the stage whose interval contains step t.
std::size_t select_model_index(const SamplerRun& run, int t);

// Initial state x_T: standard normal, or sqrt(abar_T) V + sqrt(1 - abar_T) eps
// when a bias color V is set.
Tensor init_state(const SamplerRun& run, Rng& rng);

// Ancestral update with explicit noise z:
// x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sigma_t z.
Tensor predictor_math(const Tensor& x_t, const Tensor& eps, const Tensor& z,
                      int t, const Schedule& s);

// Langevin update with explicit noise z. Computes the step size
// step = 2 alpha_t |z|^2 / |eps|^2, applies
// x <- x - step eps / sqrt(1 - abar_t) + sqrt(2 step) z in place, and
// returns step. Requires |eps| > 0.
double corrector_math(Tensor& x, const Tensor& eps, const Tensor& z, int t,
                      const Schedule& s);

// Draws z (zero at t = 1) and applies the ancestral update.
Tensor predictor_update(const Tensor& x_t, const Tensor& eps, int t,
                        const Schedule& s, Rng& rng);

// Draws z and applies one Langevin update. Returns false and leaves x alone
// when |eps| is zero and the step size is undefined; z is consumed either way
// so the stream position does not depend on the prediction values.
bool corrector_update(Tensor& x, const Tensor& eps, int t, const Schedule& s,
                      Rng& rng);

// Model-driven single steps; line is the (1, 1, S, S) conditioning batch.
Tensor predictor_step(const DenoiserModel& model, const Tensor& x_t, int t,
                      const Schedule& s, const Tensor& line, Rng& rng);
bool corrector_step(const DenoiserModel& model, Tensor& x, int t,
                    const Schedule& s, const Tensor& line, Rng& rng);

// x <- x (1 - v_alpha) + v_rgb v_alpha, in place. x may be (3, H, W) or
// (1, 3, H, W).
void apply_mask(Tensor& x, const MaskedTarget& target);

// Runs the full reverse process. Returns a (3, S, S) image clamped to
// [-1, 1]; deterministic given run.seed.
Tensor sample(const SamplerRun& run);

}  // namespace gpic
