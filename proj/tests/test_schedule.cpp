// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gpic/rng.hpp"
#include "gpic/schedule.hpp"

using namespace gpic;

TEST_SUITE("schedule") {

TEST_CASE("noise-level curve endpoints and midpoint") {
  const double lambda = 2.25;
  CHECK(alpha_bar_at(lambda, 0.0) == 1.0);
  CHECK(alpha_bar_at(lambda, 1.0) == doctest::Approx(0.006329715).epsilon(1e-6));
  CHECK(alpha_bar_at(lambda, 0.5) == doctest::Approx(0.2820629517).epsilon(1e-6));
}

TEST_CASE("discrete ladder invariants at the default size") {
  Schedule s = build_schedule(1000, 2.25);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.alpha_bar[1000] == doctest::Approx(std::exp(-2.25 * 2.25)).epsilon(1e-12));
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK(s.beta[t] > 0.0);
    CHECK(s.beta[t] < 1.0);
    CHECK(s.alpha_bar[t] ==
          doctest::Approx(s.alpha_bar[t - 1] * s.alpha[t]).epsilon(1e-12));
    CHECK(s.sigma[t] <= std::sqrt(s.beta[t]) + 1e-15);
  }
  CHECK(s.sigma[1] == 0.0);

  // Product identity: recomputing prod alpha[t] recovers alpha_bar[T].
  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) prod *= s.alpha[t];
  CHECK(static_cast<double>(prod) == doctest::Approx(s.alpha_bar[1000]).epsilon(1e-6));
}

TEST_CASE("single-step ladder is forced by its endpoints") {
  Schedule s = build_schedule(1, 2.25);
  CHECK(s.alpha_bar.size() == 2);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.alpha_bar[1] == doctest::Approx(std::exp(-5.0625)).epsilon(1e-12));
  CHECK(s.beta[1] == doctest::Approx(1.0 - std::exp(-5.0625)).epsilon(1e-12));
}

TEST_CASE("ladder construction rejects bad arguments") {
  CHECK_THROWS_AS(build_schedule(0, 2.25), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, -1.0), std::invalid_argument);
}

TEST_CASE("sampled noise levels stay in range and match the analytic CDF") {
  const double lambda = 2.25;
  const int n = 100000;
  Rng rng(12345);
  std::vector<double> draws(n);
  const double lo = std::exp(-lambda * lambda);
  for (auto& d : draws) {
    d = sample_alpha_bar(lambda, rng);
    REQUIRE(d > lo);
    REQUIRE(d <= 1.0);
  }
  std::sort(draws.begin(), draws.end());
  // CDF of A = exp(-(lambda U)^2): F(a) = 1 - sqrt(-ln a)/lambda.
  double max_dev = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = 1.0 - std::sqrt(-std::log(draws[i])) / lambda;
    max_dev = std::max(max_dev, std::abs(f - static_cast<double>(i) / n));
    max_dev = std::max(max_dev, std::abs(f - static_cast<double>(i + 1) / n));
  }
  CHECK(max_dev < 0.01);
}

TEST_CASE("forward sampling is exact at the clean end") {
  Rng rng(5);
  Tensor x0 = Tensor::from_data({2, 2}, {0.5f, -0.25f, 0.0f, 1.0f});
  auto fs = forward_sample(x0, 1.0, rng);
  for (int i = 0; i < 4; ++i) CHECK(fs.x_t.values()[i] == x0.values()[i]);
  CHECK(fs.eps.numel() == 4);
}

TEST_CASE("forward sampling mixes with sqrt coefficients") {
  Rng rng(6);
  Tensor x0 = Tensor::zeros({3, 3});
  auto fs = forward_sample(x0, 0.75, rng);
  for (int i = 0; i < 9; ++i)
    CHECK(fs.x_t.values()[i] == doctest::Approx(0.5f * fs.eps.values()[i]).epsilon(1e-7));
}

TEST_CASE("forward sampling rejects out-of-range noise levels") {
  Rng rng(7);
  Tensor x0 = Tensor::zeros({2});
  CHECK_THROWS_AS(forward_sample(x0, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(forward_sample(x0, 1.5, rng), std::invalid_argument);
}

TEST_CASE("forward sample moments match the closed form") {
  const double abar = 0.75;
  const int reps = 10000;
  Rng rng(99);
  Tensor x0 = Tensor::from_data({2, 2}, {0.5f, -0.25f, 0.0f, 1.0f});
  std::vector<double> mean(4, 0.0), m2(4, 0.0);
  for (int r = 0; r < reps; ++r) {
    auto fs = forward_sample(x0, abar, rng);
    for (int i = 0; i < 4; ++i) {
      const double v = fs.x_t.values()[i];
      mean[i] += v;
      m2[i] += v * v;
    }
  }
  const double root = std::sqrt(abar);
  const double tol = 3.0 * std::sqrt((1.0 - abar) / reps);
  for (int i = 0; i < 4; ++i) {
    mean[i] /= reps;
    const double var = m2[i] / reps - mean[i] * mean[i];
    CHECK(std::abs(mean[i] - root * x0.values()[i]) < tol);
    CHECK(var == doctest::Approx(1.0 - abar).epsilon(0.05));
  }
}

TEST_CASE("sequential per-step mixing composes to the closed form") {
  Schedule s = build_schedule(50, 2.25);
  // Deterministic part: the product of per-step signal coefficients.
  long double coeff = 1.0L;
  for (int t = 1; t <= 50; ++t) coeff *= std::sqrt(static_cast<long double>(1.0 - s.beta[t]));
  CHECK(static_cast<double>(coeff) ==
        doctest::Approx(std::sqrt(s.alpha_bar[50])).epsilon(1e-9));

  // Stochastic part: variance of the full chain started at x0 = 0.
  const int reps = 10000;
  Rng rng(4242);
  double acc = 0.0, acc2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    double x = 0.0;
    for (int t = 1; t <= 50; ++t)
      x = std::sqrt(1.0 - s.beta[t]) * x + std::sqrt(s.beta[t]) * rng.normal();
    acc += x;
    acc2 += x * x;
  }
  const double mean = acc / reps;
  const double var = acc2 / reps - mean * mean;
  CHECK(var == doctest::Approx(1.0 - s.alpha_bar[50]).epsilon(0.05));
}

}  // TEST_SUITE
