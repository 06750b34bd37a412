// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include "gpic/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include "gpic/image.hpp"
#include "gpic/ops.hpp"
#include "gpic/schedule.hpp"

namespace gpic {

void TrainerConfig::validate() const {
  opt.validate();
  if (batch_size < 1) tensor_fail("trainer: batch_size must be >= 1");
  if (epochs < 0) tensor_fail("trainer: epochs must be >= 0");
  if (clip_norm < 0) tensor_fail("trainer: clip_norm must be >= 0");
  if (val_fraction < 0 || val_fraction >= 1) tensor_fail("trainer: val_fraction must be in [0,1)");
  if (val_interval < 1) tensor_fail("trainer: val_interval must be >= 1");
  if (checkpoint_interval < 0) tensor_fail("trainer: checkpoint_interval must be >= 0");
  if (T < 1) tensor_fail("trainer: T must be >= 1");
  if (!(lambda > 0)) tensor_fail("trainer: lambda must be > 0");
}

namespace {

std::vector<Tensor> trainable(DenoiserModel& model) {
  std::vector<Tensor> out;
  for (auto& [name, t] : model.parameters()) out.push_back(t);
  return out;
}

std::string fmt_line(std::int64_t step, double loss, double abar_mean) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%lld %.6f %.6f", static_cast<long long>(step), loss, abar_mean);
  return buf;
}

}  // namespace

void stack_batch(const Dataset& data, const std::vector<int>& indices, Tensor& x0, Tensor& line) {
  if (indices.empty()) tensor_fail("stack_batch: empty batch");
  const Shape& cs = data[0].color.shape();
  const Shape& ls = data[0].line.shape();
  const int n = static_cast<int>(indices.size());
  x0 = Tensor::zeros({n, cs[0], cs[1], cs[2]});
  line = Tensor::zeros({n, ls[0], ls[1], ls[2]});
  const std::size_t cstride = data[0].color.values().size();
  const std::size_t lstride = data[0].line.values().size();
  for (int i = 0; i < n; ++i) {
    const TrainSample& s = data[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    std::memcpy(x0.values_mut().data() + i * cstride, s.color.values().data(),
                cstride * sizeof(float));
    std::memcpy(line.values_mut().data() + i * lstride, s.line.values().data(),
                lstride * sizeof(float));
  }
}

Trainer::Trainer(DenoiserModel& model, TrainerConfig cfg)
    : model_(model), cfg_(cfg), opt_(trainable(model), cfg.opt) {
  cfg_.validate();
}

void Trainer::set_step(std::int64_t s) {
  step_ = s;
  opt_.set_step_count(s);
}

double Trainer::loss_on(const Tensor& x0, const Tensor& line, Rng& rng, bool with_graph,
                        double* abar_mean_out, Tensor* loss_out) {
  const int n = x0.dim(0);
  // Draw discipline: one xi per sample first, then the full noise block.
  std::vector<double> abars(static_cast<std::size_t>(n));
  double abar_mean = 0;
  for (auto& a : abars) {
    a = sample_alpha_bar(cfg_.lambda, rng);
    abar_mean += a;
  }
  abar_mean /= n;
  if (abar_mean_out) *abar_mean_out = abar_mean;

  Tensor eps = Tensor::zeros(x0.shape());
  rng.normal_fill(eps.values_mut());
  Tensor x_t = Tensor::zeros(x0.shape());
  const std::size_t per = x0.values().size() / static_cast<std::size_t>(n);
  for (int i = 0; i < n; ++i) {
    const float a = static_cast<float>(std::sqrt(abars[static_cast<std::size_t>(i)]));
    const float b = static_cast<float>(std::sqrt(1.0 - abars[static_cast<std::size_t>(i)]));
    const float* xv = x0.values().data() + i * per;
    const float* ev = eps.values().data() + i * per;
    float* tv = x_t.values_mut().data() + i * per;
    for (std::size_t j = 0; j < per; ++j) tv[j] = a * xv[j] + b * ev[j];
  }

  if (with_graph) {
    Tensor loss = l1_loss(model_.predict_eps(x_t, abars, line), eps);
    if (loss_out) *loss_out = loss;
    return loss.item();
  }
  NoGradGuard ng;
  return l1_loss(model_.predict_eps(x_t, abars, line), eps).item();
}

double Trainer::train_step(const Tensor& x0, const Tensor& line, Rng& rng,
                           double* abar_mean_out) {
  double abar_mean = 0;
  Tensor loss;
  const double value = loss_on(x0, line, rng, /*with_graph=*/true, &abar_mean, &loss);
  if (abar_mean_out) *abar_mean_out = abar_mean;
  if (!std::isfinite(value))
    throw std::runtime_error("training diverged: loss " + std::to_string(value) + " at step " +
                             std::to_string(step_ + 1) + " (mean alpha_bar " +
                             std::to_string(abar_mean) + ")");
  opt_.zero_grad();
  loss.backward();

  if (cfg_.clip_norm > 0) {
    double norm2 = 0;
    for (auto& [name, p] : model_.parameters())
      for (float g : p.grad_mut()) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    if (norm > cfg_.clip_norm) {
      const float scale = static_cast<float>(cfg_.clip_norm / norm);
      for (auto& [name, p] : model_.parameters())
        for (auto& g : p.grad_mut()) g *= scale;
    }
  }
  opt_.step();
  ++step_;
  return value;
}

double Trainer::validation_loss(const Dataset& val, std::uint64_t stream_index) {
  if (val.empty()) tensor_fail("validation_loss: empty split");
  Rng rng(derive_seed(cfg_.seed, seed_salt::kValidation, stream_index));
  double acc = 0;
  std::int64_t count = 0;
  std::vector<int> idx;
  for (std::size_t at = 0; at < val.size(); at += static_cast<std::size_t>(cfg_.batch_size)) {
    idx.clear();
    for (std::size_t i = at; i < std::min(val.size(), at + cfg_.batch_size); ++i)
      idx.push_back(static_cast<int>(i));
    Tensor x0, line;
    stack_batch(val, idx, x0, line);
    const double loss = loss_on(x0, line, rng, /*with_graph=*/false, nullptr, nullptr);
    acc += loss * static_cast<double>(x0.numel());
    count += x0.numel();
  }
  return acc / static_cast<double>(count);
}

Checkpoint Trainer::make_checkpoint(bool with_optimizer_state) const {
  Checkpoint ckpt = checkpoint_from_model(model_, cfg_.T, cfg_.lambda, step_,
                                          {{"seed", std::to_string(cfg_.seed)}});
  if (with_optimizer_state) append_optimizer_state(ckpt);
  return ckpt;
}

void Trainer::append_optimizer_state(Checkpoint& ckpt) const {
  const auto& params = model_.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Shape& shape = params[k].second.shape();
    auto pack = [&](const char* tag, const std::vector<float>& buf) {
      ckpt.tensors.emplace_back("opt." + std::string(tag) + "." + params[k].first,
                                Tensor::from_data(shape, buf));
    };
    pack("m", opt_.moment1(k));
    pack("v", opt_.moment2(k));
    pack("slow", opt_.slow_weights(k));
  }
}

void Trainer::restore_optimizer_state(const Checkpoint& ckpt) {
  auto find = [&ckpt](const std::string& name) -> const Tensor* {
    for (const auto& [n, t] : ckpt.tensors)
      if (n == name) return &t;
    return nullptr;
  };
  const auto& params = model_.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor* m = find("opt.m." + params[k].first);
    const Tensor* v = find("opt.v." + params[k].first);
    const Tensor* s = find("opt.slow." + params[k].first);
    if (!m || !v || !s)
      throw std::runtime_error("checkpoint: no optimizer state for parameter '" +
                               params[k].first + "'");
    opt_.restore(k, std::vector<float>(m->values().begin(), m->values().end()),
                 std::vector<float>(v->values().begin(), v->values().end()),
                 std::vector<float>(s->values().begin(), s->values().end()));
  }
  opt_.set_step_count(ckpt.meta_int("step"));
  step_ = ckpt.meta_int("step");
}

TrainResult Trainer::train(const Dataset& data, const std::filesystem::path& out_dir) {
  if (data.empty()) tensor_fail("train: dataset is empty");
  std::filesystem::create_directories(out_dir);

  const int n = static_cast<int>(data.size());
  int val_count = 0;
  if (n >= 5 && cfg_.val_fraction > 0) {
    val_count = std::max(1, static_cast<int>(std::lround(cfg_.val_fraction * n)));
    val_count = std::min(val_count, n / 2);
  }
  const int train_n = n - val_count;
  Dataset train_split(data.begin(), data.begin() + train_n);
  Dataset val_split(data.begin() + train_n, data.end());

  const int batch = std::min(cfg_.batch_size, train_n);
  const std::int64_t steps_per_epoch = (train_n + batch - 1) / batch;
  const std::int64_t total_steps = steps_per_epoch * cfg_.epochs;

  TrainResult result;
  std::vector<std::string> loss_lines, val_lines;
  std::int64_t perm_epoch = -1;
  std::vector<int> perm(static_cast<std::size_t>(train_n));

  auto flush_logs = [&] {
    std::string text;
    for (const auto& l : loss_lines) text += l + "\n";
    write_file_atomic(out_dir / "loss_log.txt", text);
    std::string vtext;
    for (const auto& l : val_lines) vtext += l + "\n";
    write_file_atomic(out_dir / "val_log.txt", vtext);
  };

  while (step_ < total_steps) {
    const std::int64_t epoch = step_ / steps_per_epoch;
    const std::int64_t offset = step_ % steps_per_epoch;
    if (epoch != perm_epoch) {
      for (int i = 0; i < train_n; ++i) perm[static_cast<std::size_t>(i)] = i;
      Rng shuffle_rng(derive_seed(cfg_.seed, seed_salt::kTrainBatch, static_cast<std::uint64_t>(epoch)));
      for (int i = train_n - 1; i > 0; --i)
        std::swap(perm[static_cast<std::size_t>(i)],
                  perm[shuffle_rng.below(static_cast<std::uint64_t>(i) + 1)]);
      perm_epoch = epoch;
    }
    std::vector<int> idx;
    for (std::int64_t i = offset * batch; i < std::min<std::int64_t>(train_n, (offset + 1) * batch); ++i)
      idx.push_back(perm[static_cast<std::size_t>(i)]);

    Tensor x0, line;
    stack_batch(train_split, idx, x0, line);
    Rng step_rng(derive_seed(cfg_.seed, seed_salt::kTrainNoise, static_cast<std::uint64_t>(step_)));
    double abar_mean = 0;
    const double loss = train_step(x0, line, step_rng, &abar_mean);
    result.final_train_loss = loss;
    loss_lines.push_back(fmt_line(step_, loss, abar_mean));

    if (!val_split.empty() && (step_ % cfg_.val_interval == 0 || step_ == total_steps)) {
      const double vl = validation_loss(val_split, static_cast<std::uint64_t>(step_));
      val_lines.push_back(fmt_line(step_, vl, 0.0));
      if (!result.best_val_loss || vl < *result.best_val_loss) {
        result.best_val_loss = vl;
        result.best_path = out_dir / "best.gpic";
        Checkpoint best = make_checkpoint(/*with_optimizer_state=*/false);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", vl);
        best.set_meta("val_loss", buf);
        save_checkpoint(best, result.best_path);
      }
    }
    if (cfg_.checkpoint_interval > 0 && step_ % cfg_.checkpoint_interval == 0) {
      save_checkpoint(make_checkpoint(true),
                      out_dir / ("step_" + std::to_string(step_) + ".gpic"));
      flush_logs();
    }
  }

  result.steps = step_;
  result.final_path = out_dir / "final.gpic";
  save_checkpoint(make_checkpoint(true), result.final_path);
  flush_logs();
  return result;
}

}  // namespace gpic
