// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0
//
// Epsilon-matching training loop: per sample draw a continuous noise level
// alpha_bar = exp(-(lambda*xi)^2), mix x_t from the clean image and fresh
// noise, and minimize the L1 distance between the drawn noise and the
// network's prediction.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gpic/checkpoint.hpp"
#include "gpic/network.hpp"
#include "gpic/optimizer.hpp"
#include "gpic/rng.hpp"

namespace gpic {

struct TrainSample {
  Tensor color;  // (3,S,S) in [-1,1]
  Tensor line;   // (1,S,S) in [-1,1]
};
using Dataset = std::vector<TrainSample>;

struct TrainerConfig {
  OptimizerConfig opt;
  int batch_size = 8;
  int epochs = 1;
  double clip_norm = 1.0;       // global gradient-norm clip; 0 disables
  double val_fraction = 0.1;    // tail of the dataset held out (when big enough)
  int val_interval = 50;        // steps between validation evaluations
  int checkpoint_interval = 0;  // steps between periodic checkpoints; 0 = off
  std::uint64_t seed = 1;
  int T = 1000;                 // recorded in checkpoints for the sampler
  double lambda = 2.25;

  void validate() const;
};

struct TrainResult {
  std::int64_t steps = 0;
  double final_train_loss = 0.0;
  std::optional<double> best_val_loss;
  std::filesystem::path final_path;
  std::filesystem::path best_path;  // empty when no validation split exists
};

class Trainer {
 public:
  // The trainer owns optimizer state for the model's current parameters;
  // construct it after any checkpoint restore so LookAhead slow weights
  // start from the restored values.
  Trainer(DenoiserModel& model, TrainerConfig cfg);

  // One optimizer update on an explicit batch. rng feeds the noise-level and
  // noise draws: batch_size uniforms first, then one normal per element.
  double train_step(const Tensor& x0, const Tensor& line, Rng& rng,
                    double* abar_mean_out = nullptr);

  // Deterministic validation loss (mean L1 over all pixels of the split).
  double validation_loss(const Dataset& val, std::uint64_t stream_index);

  // Full loop: epoch shuffling, logging, best/final/periodic checkpoints.
  TrainResult train(const Dataset& data, const std::filesystem::path& out_dir);

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s);
  DenoiserModel& model() { return model_; }
  Ranger& optimizer() { return opt_; }

  // Optimizer buffers travel inside checkpoints as opt.{m,v,slow}.<param>.
  void append_optimizer_state(Checkpoint& ckpt) const;
  void restore_optimizer_state(const Checkpoint& ckpt);

  Checkpoint make_checkpoint(bool with_optimizer_state) const;

 private:
  double loss_on(const Tensor& x0, const Tensor& line, Rng& rng, bool with_graph,
                 double* abar_mean_out, Tensor* loss_out);

  DenoiserModel& model_;
  TrainerConfig cfg_;
  Ranger opt_;
  std::int64_t step_ = 0;
};

// Stacks dataset samples (by index) into batch tensors.
void stack_batch(const Dataset& data, const std::vector<int>& indices, Tensor& x0, Tensor& line);

}  // namespace gpic
