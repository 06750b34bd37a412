// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "gpic/sampler.hpp"

using namespace gpic;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.C = 2;
  cfg.depth = 2;
  cfg.D = 8;
  cfg.image_size = 16;
  cfg.fourier_seed = 3;
  return cfg;
}

// A model whose predictions are nonzero (fresh models have a zeroed head).
DenoiserModel perturbed_model(std::uint64_t seed) {
  DenoiserModel model(tiny_config(), seed);
  Rng rng(seed + 1000);
  for (auto& v : model.parameter("head.w").values_mut())
    v = static_cast<float>(rng.normal()) * 0.05f;
  return model;
}

Tensor test_line(int size, std::uint64_t seed) {
  Tensor line = Tensor::zeros({1, size, size});
  Rng rng(seed);
  for (auto& v : line.values_mut()) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  return line;
}

// Hand-built two-step ladder for scalar oracles; sigma filled from the
// closed form so predictor tests exercise exactly the published update.
Schedule toy_schedule(double abar1, double abar2) {
  Schedule s;
  s.T = 2;
  s.lambda = 1.0;
  s.alpha_bar = {1.0, abar1, abar2};
  s.alpha = {1.0, abar1, abar2 / abar1};
  s.beta = {0.0, 1.0 - s.alpha[1], 1.0 - s.alpha[2]};
  s.sigma = {0.0, 0.0,
             std::sqrt((1.0 - abar1) / (1.0 - abar2) * s.beta[2])};
  return s;
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("unbiased initial state is standard normal") {
  SamplerRun run;
  Schedule sched = build_schedule(10, 2.25);
  run.schedule = &sched;
  run.line = test_line(32, 1);
  Rng rng(2024);
  double sum = 0, sum_sq = 0;
  int n = 0;
  for (int rep = 0; rep < 30; ++rep) {
    Tensor x = init_state(run, rng);
    REQUIRE(x.shape() == Shape{1, 3, 32, 32});
    for (float v : x.values()) {
      sum += v;
      sum_sq += static_cast<double>(v) * v;
      ++n;
    }
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.015);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("biased initial state has mean sqrt(abar_T) V") {
  SamplerRun run;
  Schedule sched = build_schedule(1000, 2.25);
  run.schedule = &sched;
  run.line = test_line(32, 2);
  run.bias_color = std::array<double, 3>{1.0, 1.0, 1.0};
  Rng rng(77);
  double sum = 0;
  int n = 0;
  for (int rep = 0; rep < 30; ++rep) {
    Tensor x = init_state(run, rng);
    for (float v : x.values()) {
      sum += v;
      ++n;
    }
  }
  // sqrt(exp(-2.25^2)) = 0.0795595; sem over ~92k draws is about 0.0033.
  CHECK(std::abs(sum / n - 0.0795595087) < 0.012);
}

TEST_CASE("biased initial state mixes the exact noise stream") {
  SamplerRun run;
  Schedule sched = build_schedule(50, 2.25);
  run.schedule = &sched;
  run.line = test_line(16, 3);
  run.bias_color = std::array<double, 3>{0.5, -1.0, 0.25};
  Rng rng(31);
  Tensor x = init_state(run, rng);

  Rng ref(31);
  Tensor eps = Tensor::zeros({1, 3, 16, 16});
  ref.normal_fill(eps.values_mut());
  const double abar_t = sched.alpha_bar[50];
  const double a = std::sqrt(abar_t), b = std::sqrt(1.0 - abar_t);
  const double v[3] = {0.5, -1.0, 0.25};
  const auto xv = x.values();
  const auto ev = eps.values();
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 256; ++i) {
      const std::size_t k = static_cast<std::size_t>(c * 256 + i);
      CHECK(xv[k] == static_cast<float>(a * v[c] + b * ev[k]));
    }
}

TEST_CASE("bias color outside [-1,1] is rejected") {
  SamplerRun run;
  Schedule sched = build_schedule(10, 2.25);
  run.schedule = &sched;
  run.line = test_line(16, 4);
  run.bias_color = std::array<double, 3>{1.5, 0.0, 0.0};
  Rng rng(1);
  CHECK_THROWS_AS(init_state(run, rng), std::invalid_argument);
}

TEST_CASE("predictor with zero prediction and zero noise rescales by 1/sqrt(alpha)") {
  Schedule s = toy_schedule(0.9, 0.81);
  Tensor x = Tensor::from_data({4}, {1.0f, -0.5f, 0.25f, 2.0f});
  Tensor zero = Tensor::zeros({4});
  Tensor out = predictor_math(x, zero, zero, 2, s);
  const double inv = 1.0 / std::sqrt(0.9);
  for (int i = 0; i < 4; ++i)
    CHECK(out.values()[i] == doctest::Approx(x.values()[i] * inv).epsilon(1e-6));
}

TEST_CASE("predictor noise scale matches the closed-form sigma") {
  // abar_{t-1} = 0.9, abar_t = 0.81: sigma^2 = (0.1 / 0.19) * 0.1 = 1/19.
  Schedule s = toy_schedule(0.9, 0.81);
  CHECK(s.sigma[2] * s.sigma[2] == doctest::Approx(1.0 / 19.0).epsilon(1e-9));
  Tensor x = Tensor::zeros({1});
  Tensor eps = Tensor::zeros({1});
  Tensor z = Tensor::from_data({1}, {1.0f});
  Tensor out = predictor_math(x, eps, z, 2, s);
  CHECK(out.values()[0] == doctest::Approx(std::sqrt(1.0 / 19.0)).epsilon(1e-6));
}

TEST_CASE("full ladder sigma matches the closed form at every step") {
  Schedule s = build_schedule(100, 2.25);
  CHECK(s.sigma[1] == 0.0);
  for (int t = 2; t <= 100; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const double expected =
        std::sqrt((1.0 - s.alpha_bar[ti - 1]) / (1.0 - s.alpha_bar[ti]) * s.beta[ti]);
    CHECK(s.sigma[ti] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("corrector scalar oracle") {
  // alpha_t = 0.9, abar_t = 0.5, eps = 2, z = 1:
  // step = 2 * 0.9 * 1 / 4 = 0.45, drift = -0.45 * 2 / sqrt(0.5), noise = sqrt(0.9).
  Schedule s = toy_schedule(0.9, 0.5);
  s.alpha[2] = 0.9;  // decouple alpha from the ladder for the hand case
  Tensor x = Tensor::from_data({1}, {0.2f});
  Tensor eps = Tensor::from_data({1}, {2.0f});
  Tensor z = Tensor::from_data({1}, {1.0f});
  const double step = corrector_math(x, eps, z, 2, s);
  CHECK(step == doctest::Approx(0.45).epsilon(1e-9));
  const double expected = 0.2 - 1.2727922061357857 + 0.9486832980505138;
  CHECK(x.values()[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("corrector drift equals step size times the score") {
  // eps = 0.5 at abar = 0.75 has score -0.5/sqrt(0.25) = -1; with alpha = 0.5
  // and z = 1 the step size is 2*0.5*1/0.25 = 4, so x moves by 4*(-1) plus noise.
  Schedule s = toy_schedule(0.9, 0.75);
  s.alpha[2] = 0.5;
  Tensor x = Tensor::zeros({1});
  Tensor eps = Tensor::from_data({1}, {0.5f});
  Tensor z = Tensor::from_data({1}, {1.0f});
  const double step = corrector_math(x, eps, z, 2, s);
  CHECK(step == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(x.values()[0] == doctest::Approx(-4.0 + std::sqrt(8.0)).epsilon(1e-6));
}

TEST_CASE("corrector skip on zero prediction consumes the noise draw") {
  Schedule s = toy_schedule(0.9, 0.81);
  Tensor x = Tensor::from_data({4}, {1.0f, 2.0f, 3.0f, 4.0f});
  Tensor zero = Tensor::zeros({4});
  Rng rng(5);
  CHECK_FALSE(corrector_update(x, zero, 2, s, rng));
  for (int i = 0; i < 4; ++i) CHECK(x.values()[i] == static_cast<float>(i + 1));
  // The skipped call must have consumed exactly one 4-element fill.
  Rng ref(5);
  std::vector<float> burn(4);
  ref.normal_fill(std::span<float>(burn));
  CHECK(rng.normal() == ref.normal());
}

TEST_CASE("model ladder selection picks the stage containing t") {
  DenoiserModel a = perturbed_model(10);
  DenoiserModel b = perturbed_model(11);
  Schedule sched = build_schedule(20, 2.25);
  SamplerRun run;
  run.schedule = &sched;
  run.models = {{&a, 20}, {&b, 4}};
  CHECK(select_model_index(run, 20) == 0);
  CHECK(select_model_index(run, 5) == 0);
  CHECK(select_model_index(run, 4) == 1);
  CHECK(select_model_index(run, 1) == 1);
  SamplerRun single;
  single.models = {{&a, 20}};
  CHECK(select_model_index(single, 1) == 0);
  CHECK(select_model_index(single, 20) == 0);
  SamplerRun empty;
  CHECK_THROWS_AS(select_model_index(empty, 1), std::invalid_argument);
}

TEST_CASE("non-decreasing switch points are rejected") {
  DenoiserModel a = perturbed_model(12);
  Schedule sched = build_schedule(20, 2.25);
  SamplerRun run;
  run.schedule = &sched;
  run.line = test_line(16, 6);
  run.models = {{&a, 20}, {&a, 20}};
  CHECK_THROWS_AS(sample(run), std::invalid_argument);
  run.models = {{&a, 10}};  // first stage must cover t = T
  CHECK_THROWS_AS(sample(run), std::invalid_argument);
}

TEST_CASE("apply_mask blends by alpha") {
  Tensor x = Tensor::full({3, 2, 2}, 0.0f);
  MaskedTarget mt;
  mt.v_rgb = Tensor::full({3, 2, 2}, 1.0f);
  mt.v_alpha = Tensor::from_data({1, 2, 2}, {0.0f, 1.0f, 0.5f, 0.25f});
  apply_mask(x, mt);
  for (int c = 0; c < 3; ++c) {
    CHECK(x.values()[c * 4 + 0] == 0.0f);
    CHECK(x.values()[c * 4 + 1] == 1.0f);
    CHECK(x.values()[c * 4 + 2] == 0.5f);
    CHECK(x.values()[c * 4 + 3] == 0.25f);
  }
}

TEST_CASE("same seed gives identical samples, different seeds differ") {
  DenoiserModel model = perturbed_model(13);
  Schedule sched = build_schedule(20, 2.25);
  SamplerRun run;
  run.schedule = &sched;
  run.models = {{&model, 20}};
  run.line = test_line(16, 7);
  run.seed = 99;
  Tensor a = sample(run);
  Tensor b = sample(run);
  REQUIRE(a.shape() == Shape{3, 16, 16});
  for (std::size_t i = 0; i < a.values().size(); ++i) CHECK(a.values()[i] == b.values()[i]);
  run.seed = 100;
  Tensor c = sample(run);
  double diff = 0;
  for (std::size_t i = 0; i < a.values().size(); ++i)
    diff += std::abs(static_cast<double>(a.values()[i]) - c.values()[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("corrector iterations change the trajectory but keep it valid") {
  DenoiserModel model = perturbed_model(14);
  Schedule sched = build_schedule(20, 2.25);
  SamplerRun run;
  run.schedule = &sched;
  run.models = {{&model, 20}};
  run.line = test_line(16, 8);
  run.seed = 5;
  Tensor plain = sample(run);
  run.corrector_iterations = 2;
  Tensor corrected = sample(run);
  double diff = 0;
  for (std::size_t i = 0; i < plain.values().size(); ++i)
    diff += std::abs(static_cast<double>(plain.values()[i]) - corrected.values()[i]);
  CHECK(diff > 0.0);
  for (float v : corrected.values()) {
    CHECK(std::isfinite(v));
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("masked region is pinned at every step entry and in the output") {
  DenoiserModel model = perturbed_model(15);
  Schedule sched = build_schedule(20, 2.25);
  SamplerRun run;
  run.schedule = &sched;
  run.models = {{&model, 20}};
  run.line = test_line(16, 9);
  run.seed = 6;
  MaskedTarget mt;
  mt.v_rgb = Tensor::zeros({3, 16, 16});
  mt.v_alpha = Tensor::zeros({1, 16, 16});
  Rng rng(10);
  for (auto& v : mt.v_rgb.values_mut()) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  auto av = mt.v_alpha.values_mut();
  for (int i = 0; i < 256; ++i) av[static_cast<std::size_t>(i)] = (i % 3 == 0) ? 1.0f : 0.0f;
  run.masked_target = mt;

  int entries = 0, violations = 0;
  run.on_step_entry = [&](int, const Tensor& x) {
    ++entries;
    const auto xv = x.values();
    const auto rv = mt.v_rgb.values();
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 256; ++i)
        if (i % 3 == 0 && xv[static_cast<std::size_t>(c * 256 + i)] !=
                              rv[static_cast<std::size_t>(c * 256 + i)])
          ++violations;
  };
  Tensor out = sample(run);
  CHECK(entries == 20);
  CHECK(violations == 0);
  const auto ov = out.values();
  const auto rv = mt.v_rgb.values();
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 256; ++i)
      if (i % 3 == 0) CHECK(ov[static_cast<std::size_t>(c * 256 + i)] ==
                            rv[static_cast<std::size_t>(c * 256 + i)]);
}

TEST_CASE("bias color steers the output of a zero-prediction model") {
  // With a fresh model the head is zero, so the reverse process just rescales
  // x_T; the biased mean must survive to the output's red channel.
  DenoiserModel model(tiny_config(), 16);
  Schedule sched = build_schedule(20, 2.25);
  SamplerRun run;
  run.schedule = &sched;
  run.models = {{&model, 20}};
  run.line = test_line(16, 11);

  auto mean_red = [&](std::array<double, 3> bias) {
    run.bias_color = bias;
    double sum = 0;
    int n = 0;
    for (int s = 0; s < 16; ++s) {
      run.seed = 300 + static_cast<std::uint64_t>(s);
      Tensor out = sample(run);
      for (int i = 0; i < 256; ++i) sum += out.values()[static_cast<std::size_t>(i)];
      n += 256;
    }
    return sum / n;
  };
  const double red_up = mean_red({1.0, -1.0, -1.0});
  const double red_down = mean_red({-1.0, -1.0, 1.0});
  CHECK(red_up > red_down);
}

TEST_CASE("trace emits one JSON line per step with model switches") {
  DenoiserModel a = perturbed_model(17);
  DenoiserModel b = perturbed_model(18);
  Schedule sched = build_schedule(6, 2.25);
  SamplerRun run;
  run.schedule = &sched;
  run.models = {{&a, 6}, {&b, 2}};
  run.line = test_line(16, 12);
  run.seed = 8;
  run.corrector_iterations = 1;
  std::ostringstream trace;
  run.trace = &trace;
  sample(run);
  std::istringstream in(trace.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0].find("\"t\":6") != std::string::npos);
  CHECK(lines[0].find("\"model\":0") != std::string::npos);
  CHECK(lines[4].find("\"t\":2") != std::string::npos);
  CHECK(lines[4].find("\"model\":1") != std::string::npos);
  CHECK(lines[5].find("\"t\":1") != std::string::npos);
  for (const auto& l : lines) {
    CHECK(l.front() == '{');
    CHECK(l.back() == '}');
    CHECK(l.find("\"eps_norm\":") != std::string::npos);
    CHECK(l.find("\"correctors\":1") != std::string::npos);
  }
}

TEST_CASE("switch point shifts keep outputs finite and in range") {
  DenoiserModel a = perturbed_model(19);
  DenoiserModel b = perturbed_model(20);
  Schedule sched = build_schedule(30, 2.25);
  SamplerRun run;
  run.schedule = &sched;
  run.line = test_line(16, 13);
  run.seed = 9;
  for (int switch_at : {5, 15, 25}) {
    run.models = {{&a, 30}, {&b, switch_at}};
    Tensor out = sample(run);
    for (float v : out.values()) {
      CHECK(std::isfinite(v));
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
  }
}

}  // TEST_SUITE
