// Copyright (c) 2026 ivm-fusion contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ivm/em.hpp"

namespace {

std::vector<Eigen::VectorXd> draw_bimodal(std::uint64_t seed, int n, double w0 = 0.7,
                                          double mu1 = 10.0, double sd1 = 2.0) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution pick(1.0 - w0);
  std::normal_distribution<double> a(0.0, 1.0);
  std::normal_distribution<double> b(mu1, sd1);
  std::vector<Eigen::VectorXd> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd e(1);
    e << (pick(rng) ? b(rng) : a(rng));
    out.push_back(e);
  }
  return out;
}

double sample_log_likelihood(const ivm::GaussianMixture& gmm,
                             const std::vector<Eigen::VectorXd>& samples) {
  double ll = 0.0;
  for (const auto& e : samples) ll += std::log(ivm::mixture_density(gmm, e));
  return ll;
}

TEST_CASE("seed_mixture places means at spread quantiles") {
  std::vector<Eigen::VectorXd> samples;
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd e(1);
    e << static_cast<double>(i);  // 0..99
    samples.push_back(e);
  }
  const auto gmm = ivm::seed_mixture(samples, 2);
  REQUIRE(gmm.size() == 2);
  CHECK(gmm[0].weight == Catch::Approx(0.5));
  CHECK(gmm[1].weight == Catch::Approx(0.5));
  // Quantile positions (k + 1/2)/K of the sorted data: 25 and 75.
  CHECK(gmm[0].mean[0] == Catch::Approx(25.0));
  CHECK(gmm[1].mean[0] == Catch::Approx(75.0));
  // Shared variance equals the unbiased sample variance.
  double mean = 49.5, var = 0.0;
  for (int i = 0; i < 100; ++i) var += (i - mean) * (i - mean);
  var /= 99.0;
  CHECK(gmm[0].sqrt_info(0, 0) == Catch::Approx(1.0 / std::sqrt(var)).epsilon(1e-12));
}

TEST_CASE("EM log-likelihood is monotonically non-decreasing") {
  const auto samples = draw_bimodal(42, 500);
  ivm::GaussianMixture gmm = ivm::seed_mixture(samples, 2);
  double prev = sample_log_likelihood(gmm, samples);
  // Chain single iterations: each em_fit call with max_iter=1 performs one
  // E-step + one M-step, and its report carries the E-step likelihood of the
  // incoming model.
  for (int it = 0; it < 30; ++it) {
    ivm::EmReport report;
    gmm = ivm::em_fit(samples, 2, gmm, 1, 0.0, &report);
    CHECK(report.log_likelihood >= prev - 1e-9 * std::abs(prev));
    prev = report.log_likelihood;
    // The fitted model must score at least as well as the E-step snapshot.
    CHECK(sample_log_likelihood(gmm, samples) >= report.log_likelihood - 1e-9 * std::abs(prev));
  }
}

TEST_CASE("EM recovers a well-separated bimodal mixture") {
  const auto samples = draw_bimodal(7, 2000);
  const auto init = ivm::seed_mixture(samples, 2);
  ivm::EmReport report;
  auto gmm = ivm::em_fit(samples, 2, init, 200, 1e-8, &report);
  REQUIRE(gmm.size() == 2);
  // Order by mean so the labels are deterministic.
  if (gmm[0].mean[0] > gmm[1].mean[0]) std::swap(gmm.components()[0], gmm.components()[1]);
  CHECK(gmm[0].weight == Catch::Approx(0.7).margin(0.05));
  CHECK(gmm[0].mean[0] == Catch::Approx(0.0).margin(0.3));
  CHECK(gmm[1].mean[0] == Catch::Approx(10.0).margin(0.5));
  const double var1 = 1.0 / (gmm[1].sqrt_info(0, 0) * gmm[1].sqrt_info(0, 0));
  CHECK(var1 == Catch::Approx(4.0).epsilon(0.35));
  CHECK(report.converged);
}

TEST_CASE("EM fit is exact for a single Gaussian component") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(5.0, 2.0);
  std::vector<Eigen::VectorXd> samples;
  double sum = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Eigen::VectorXd e(1);
    e << d(rng);
    sum += e[0];
    samples.push_back(e);
  }
  const double mean = sum / 1000.0;
  double ss = 0.0;
  for (const auto& e : samples) ss += (e[0] - mean) * (e[0] - mean);
  const auto init = ivm::seed_mixture(samples, 1);
  const auto gmm = ivm::em_fit(samples, 1, init, 100, 1e-10);
  // K=1 EM converges to the ML estimate (biased variance) in one step.
  CHECK(gmm[0].mean[0] == Catch::Approx(mean).epsilon(1e-10));
  const double var = 1.0 / (gmm[0].sqrt_info(0, 0) * gmm[0].sqrt_info(0, 0));
  CHECK(var == Catch::Approx(ss / 1000.0).epsilon(1e-8));
  CHECK(gmm[0].weight == Catch::Approx(1.0));
}

TEST_CASE("degenerate data hits the covariance floor without NaN") {
  std::vector<Eigen::VectorXd> samples;
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd e(1);
    e << 4.0;  // all identical
    samples.push_back(e);
  }
  ivm::EmReport report;
  const auto init = ivm::seed_mixture(samples, 2);
  const auto gmm = ivm::em_fit(samples, 2, init, 50, 1e-8, &report);
  CHECK(report.floored);
  for (const auto& c : gmm.components()) {
    CHECK(std::isfinite(c.weight));
    CHECK(std::isfinite(c.mean[0]));
    CHECK(std::isfinite(c.sqrt_info(0, 0)));
    // Floored variance: info cannot exceed 1/floor.
    CHECK(c.sqrt_info(0, 0) <= 1.0 / std::sqrt(ivm::kEmCovarianceFloor) + 1e-9);
  }
}

TEST_CASE("EM input validation") {
  const auto samples = draw_bimodal(1, 10);
  const auto init = ivm::seed_mixture(samples, 2);
  CHECK_THROWS_AS(ivm::em_fit({}, 2, init), std::invalid_argument);
  CHECK_THROWS_AS(ivm::em_fit(samples, 3, init), std::invalid_argument);  // K != init.size
  CHECK_THROWS_AS(ivm::em_fit(samples, 0, ivm::GaussianMixture(1)), std::invalid_argument);
  const auto two = draw_bimodal(1, 2);
  CHECK_THROWS_AS(ivm::em_fit(two, 3, ivm::seed_mixture(samples, 3)), std::invalid_argument);
  CHECK_THROWS_AS(ivm::seed_mixture({}, 1), std::invalid_argument);
}

TEST_CASE("EM is invariant to sample order") {
  auto samples = draw_bimodal(11, 300);
  const auto init = ivm::seed_mixture(samples, 2);
  const auto a = ivm::em_fit(samples, 2, init, 50, 1e-8);
  std::reverse(samples.begin(), samples.end());
  // Re-seed from reversed samples: quantiles are order-independent.
  const auto init_r = ivm::seed_mixture(samples, 2);
  const auto b = ivm::em_fit(samples, 2, init_r, 50, 1e-8);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].weight == Catch::Approx(b[k].weight).margin(1e-9));
    CHECK(a[k].mean[0] == Catch::Approx(b[k].mean[0]).margin(1e-7));
  }
}

TEST_CASE("EM handles multivariate data") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Eigen::VectorXd> samples;
  for (int i = 0; i < 800; ++i) {
    Eigen::VectorXd e(2);
    if (i % 2 == 0) {
      e << n01(rng), n01(rng);
    } else {
      e << 8.0 + 0.5 * n01(rng), -8.0 + 0.5 * n01(rng);
    }
    samples.push_back(e);
  }
  auto gmm = ivm::em_fit(samples, 2, ivm::seed_mixture(samples, 2), 100, 1e-8);
  if (gmm[0].mean[0] > gmm[1].mean[0]) std::swap(gmm.components()[0], gmm.components()[1]);
  CHECK(gmm[0].mean.norm() == Catch::Approx(0.0).margin(0.3));
  CHECK(gmm[1].mean[0] == Catch::Approx(8.0).margin(0.3));
  CHECK(gmm[1].mean[1] == Catch::Approx(-8.0).margin(0.3));
  CHECK(gmm[0].weight == Catch::Approx(0.5).margin(0.05));
}

}  // namespace
