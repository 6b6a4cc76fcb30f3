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

#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <random>
#include <vector>

#include "ivm/em.hpp"
#include "ivm/vbi.hpp"

namespace {

// Independent digamma: recurrence into the asymptotic regime, then the
// Bernoulli-number expansion. Absolute error < 1e-13 for the arguments used.
double digamma_oracle(double x) {
  double acc = 0.0;
  while (x < 30.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return acc + std::log(x) - 0.5 * inv -
         inv2 * (1.0 / 12.0 -
                 inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0))));
}

std::vector<Eigen::VectorXd> draw_scalar(std::uint64_t seed, int n,
                                         const std::vector<double>& weights,
                                         const std::vector<double>& means,
                                         const std::vector<double>& stds) {
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::vector<Eigen::VectorXd> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int k = pick(rng);
    std::normal_distribution<double> d(means[k], stds[k]);
    Eigen::VectorXd e(1);
    e << d(rng);
    out.push_back(e);
  }
  return out;
}

ivm::MixturePriors scalar_priors(double v0) {
  ivm::MixturePriors p;
  p.V0 = Eigen::MatrixXd::Constant(1, 1, v0);
  return p;
}

TEST_CASE("Wishart expectation") {
  CHECK((ivm::wishart_expectation(2.0, 2.0 * Eigen::Matrix2d::Identity()) -
         Eigen::Matrix2d::Identity())
            .norm() == Catch::Approx(0.0).margin(1e-14));

  Eigen::Matrix2d v = Eigen::Vector2d(2.0, 8.0).asDiagonal();
  const Eigen::MatrixXd e = ivm::wishart_expectation(4.0, v);
  CHECK(e(0, 0) == Catch::Approx(2.0).epsilon(1e-14));
  CHECK(e(1, 1) == Catch::Approx(0.5).epsilon(1e-14));
  CHECK(e(0, 1) == Catch::Approx(0.0).margin(1e-14));

  Eigen::Matrix2d notpd;
  notpd << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(ivm::wishart_expectation(3.0, notpd), std::invalid_argument);
  CHECK_THROWS_AS(ivm::wishart_expectation(3.0, Eigen::MatrixXd(2, 3)), std::invalid_argument);
}

TEST_CASE("prior scale from empirical errors") {
  std::vector<Eigen::VectorXd> samples;
  for (double v : {-3.0, 0.0, 3.0}) {
    Eigen::VectorXd e(1);
    e << v;
    samples.push_back(e);
  }
  const auto priors = ivm::prior_from_errors(samples);
  CHECK(priors.nu0 == 2.0);
  CHECK(priors.beta0 == 1e-6);
  // Unbiased variance 9, scale V0 = var / nu0 = 4.5 so that the implied
  // expected information nu0 * V0^-1 = nu0^2 / var.
  CHECK(priors.V0(0, 0) == Catch::Approx(4.5).epsilon(1e-14));
  const auto e_info = ivm::wishart_expectation(priors.nu0, priors.V0);
  CHECK(e_info(0, 0) == Catch::Approx(4.0 / 9.0).epsilon(1e-14));

  // Constant samples fall back to the variance floor.
  std::vector<Eigen::VectorXd> flat(5, samples[1]);
  const auto floored = ivm::prior_from_errors(flat);
  CHECK(floored.V0(0, 0) == Catch::Approx(1e-4).epsilon(1e-14));

  CHECK_THROWS_AS(ivm::prior_from_errors({samples[0]}), std::invalid_argument);
}

TEST_CASE("add_component rescales weights and seeds from the prior") {
  const auto priors = scalar_priors(4.5);
  ivm::VariationalPosterior post;
  post.dim = 1;
  post.components.push_back(ivm::detail::prior_component(priors));
  post.components[0].weight = 1.0;
  post.components[0].m = Eigen::VectorXd::Constant(1, 7.0);

  const auto grown = ivm::add_component(post, priors);
  REQUIRE(grown.size() == 2);
  CHECK(grown.components[0].weight == Catch::Approx(0.5).epsilon(1e-14));
  CHECK(grown.components[1].weight == Catch::Approx(0.5).epsilon(1e-14));
  CHECK(grown.components[0].m[0] == 7.0);  // survivors untouched
  CHECK(grown.components[1].m[0] == 0.0);
  CHECK(grown.components[1].nu == priors.nu0);
  CHECK(grown.components[1].V(0, 0) == priors.V0(0, 0));
  const auto e_info = grown.components[1].expected_info();
  CHECK(e_info(0, 0) == Catch::Approx(priors.nu0 / 4.5).epsilon(1e-14));

  // Growing twice: 1 -> 2 -> 3 gives thirds for the newcomer.
  const auto thrice = ivm::add_component(grown, priors);
  REQUIRE(thrice.size() == 3);
  CHECK(thrice.components[0].weight == Catch::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(thrice.components[2].weight == Catch::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("digamma agrees with an independent evaluation") {
  for (double x : {0.5, 1.0, 1.5, 2.0, 3.5, 7.0, 12.25, 100.0}) {
    CHECK(boost::math::digamma(x) ==
          Catch::Approx(digamma_oracle(x)).epsilon(1e-12).margin(1e-13));
  }
}

TEST_CASE("responsibility update matches a literal evaluation") {
  const auto priors = scalar_priors(2.0);
  ivm::VariationalPosterior post;
  post.dim = 1;
  // Two hand-built components with distinct parameters.
  ivm::VariationalComponent c0;
  c0.m = Eigen::VectorXd::Constant(1, -1.0);
  c0.Lambda = Eigen::MatrixXd::Constant(1, 1, 3.0);
  c0.nu = 5.0;
  c0.V = Eigen::MatrixXd::Constant(1, 1, 2.5);
  c0.weight = 0.6;
  ivm::VariationalComponent c1;
  c1.m = Eigen::VectorXd::Constant(1, 4.0);
  c1.Lambda = Eigen::MatrixXd::Constant(1, 1, 0.8);
  c1.nu = 3.0;
  c1.V = Eigen::MatrixXd::Constant(1, 1, 1.5);
  c1.weight = 0.4;
  post.components = {c0, c1};

  Eigen::MatrixXd x(5, 1);
  x << -2.0, -0.5, 1.0, 3.7, 6.0;
  ivm::vbi_update_responsibilities(post, x);
  REQUIRE(post.responsibilities.rows() == 5);
  REQUIRE(post.responsibilities.cols() == 2);

  // Literal scalar form: ln rho_nk = ln w + (1/2) E[ln I] - (1/2) ln(2 pi)
  //   - (1/2) [ (x - m)^2 E[I] + E[I] / Lambda ],
  // with E[I] = nu / V and E[ln I] = psi(nu/2) + ln 2 - ln V.
  for (int i = 0; i < 5; ++i) {
    double log_rho[2];
    for (int k = 0; k < 2; ++k) {
      const auto& c = post.components[static_cast<std::size_t>(k)];
      const double e_info = c.nu / c.V(0, 0);
      const double e_log_info = digamma_oracle(c.nu / 2.0) + std::log(2.0) - std::log(c.V(0, 0));
      const double dx = x(i, 0) - c.m[0];
      log_rho[k] = std::log(c.weight) + 0.5 * e_log_info - 0.5 * std::log(2.0 * std::numbers::pi) -
                   0.5 * (dx * dx * e_info + e_info / c.Lambda(0, 0));
    }
    const double m = std::max(log_rho[0], log_rho[1]);
    const double z = std::exp(log_rho[0] - m) + std::exp(log_rho[1] - m);
    for (int k = 0; k < 2; ++k) {
      const double want = std::exp(log_rho[k] - m) / z;
      CHECK(post.responsibilities(i, k) == Catch::Approx(want).margin(1e-10));
    }
    CHECK(post.responsibilities.row(i).sum() == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("expected mixture carries posterior parameters") {
  const auto priors = scalar_priors(2.0);
  ivm::VariationalPosterior post;
  post.dim = 1;
  auto c = ivm::detail::prior_component(priors);
  c.m = Eigen::VectorXd::Constant(1, 3.0);
  c.nu = 8.0;
  c.V = Eigen::MatrixXd::Constant(1, 1, 2.0);
  c.weight = 1.0;
  post.components.push_back(c);
  const auto gmm = ivm::expected_mixture(post);
  REQUIRE(gmm.size() == 1);
  CHECK(gmm[0].mean[0] == 3.0);
  CHECK(gmm[0].weight == 1.0);
  // sqrt_info^T sqrt_info = E[I] = nu / V = 4.
  CHECK(gmm[0].sqrt_info(0, 0) == Catch::Approx(2.0).epsilon(1e-14));

  CHECK_THROWS_AS(ivm::expected_mixture(ivm::VariationalPosterior{}), std::invalid_argument);
}

TEST_CASE("variational fit matches EM under a weak prior") {
  const auto samples = draw_scalar(19, 3000, {0.65, 0.35}, {0.0, 12.0}, {1.0, 1.0});
  const auto priors = ivm::prior_from_errors(samples);
  ivm::ComplexityConfig cfg;
  cfg.w_min_fixed = 0.0;  // no pruning: keep both components comparable to EM
  auto post = ivm::seed_posterior(samples, 2, priors);
  post = ivm::vbi_fit(samples, post, priors, cfg);
  REQUIRE(post.size() == 2);
  auto vb = ivm::expected_mixture(post);
  auto em = ivm::em_fit(samples, 2, ivm::seed_mixture(samples, 2), 300, 1e-10);
  if (vb[0].mean[0] > vb[1].mean[0]) std::swap(vb.components()[0], vb.components()[1]);
  if (em[0].mean[0] > em[1].mean[0]) std::swap(em.components()[0], em.components()[1]);
  for (int k = 0; k < 2; ++k) {
    CHECK(vb[k].weight == Catch::Approx(em[k].weight).margin(0.02));
    CHECK(vb[k].mean[0] == Catch::Approx(em[k].mean[0]).margin(0.1));
    const double var_vb = 1.0 / (vb[k].sqrt_info(0, 0) * vb[k].sqrt_info(0, 0));
    const double var_em = 1.0 / (em[k].sqrt_info(0, 0) * em[k].sqrt_info(0, 0));
    CHECK(var_vb == Catch::Approx(var_em).epsilon(0.1));
  }
}

TEST_CASE("posterior self-consistency after a fit") {
  const auto samples = draw_scalar(23, 600, {1.0}, {0.0}, {1.5});
  const auto priors = ivm::prior_from_errors(samples);
  ivm::ComplexityConfig cfg;
  auto post = ivm::vbi_fit(samples, ivm::seed_posterior(samples, 2, priors), priors, cfg);
  const int n = static_cast<int>(samples.size());
  REQUIRE(post.responsibilities.rows() == n);
  REQUIRE(post.responsibilities.cols() == static_cast<int>(post.size()));
  const Eigen::VectorXd nk = post.responsibilities.colwise().sum();
  double wsum = 0.0;
  for (std::size_t k = 0; k < post.size(); ++k) {
    const auto& c = post.components[k];
    // Degrees of freedom track the effective counts.
    CHECK(c.nu == Catch::Approx(priors.nu0 + nk[static_cast<int>(k)]).epsilon(1e-9));
    CHECK(c.weight == Catch::Approx(nk[static_cast<int>(k)] / n).epsilon(1e-9));
    CHECK(c.weight >= 1.0 / n);  // survivors sit above the pruning threshold
    wsum += c.weight;
  }
  CHECK(wsum == Catch::Approx(1.0).epsilon(1e-12));
  for (int i = 0; i < n; ++i) {
    CHECK(post.responsibilities.row(i).sum() == Catch::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("components starved by a regime change are pruned") {
  // A three-mode posterior meets data whose two outer modes have vanished:
  // the components left without support must lose their weight and die.
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const auto history =
        draw_scalar(seed * 7 + 1, 900, {1.0 / 3, 1.0 / 3, 1.0 / 3}, {0.0, 10.0, 20.0},
                    {1.0, 1.0, 1.0});
    const auto priors_h = ivm::prior_from_errors(history);
    ivm::ComplexityConfig keep_all;
    keep_all.w_min_fixed = 0.0;
    auto post =
        ivm::vbi_fit(history, ivm::seed_posterior(history, 3, priors_h), priors_h, keep_all);
    REQUIRE(post.size() == 3);

    const auto samples = draw_scalar(seed * 7 + 2, 1000, {1.0}, {0.0}, {1.0});
    const auto priors = ivm::prior_from_errors(samples);
    ivm::ComplexityConfig cfg;  // default w_min = 1/N
    post = ivm::vbi_fit(samples, post, priors, cfg);
    REQUIRE(post.size() == 1);
    CHECK(post.components[0].weight >= 0.99);
    CHECK(post.components[0].m[0] == Catch::Approx(0.0).margin(0.2));
  }
}

TEST_CASE("identical twin components evolve identically") {
  const auto samples = draw_scalar(37, 400, {1.0}, {0.0}, {1.0});
  const auto priors = ivm::prior_from_errors(samples);
  ivm::VariationalPosterior post;
  post.dim = 1;
  auto c = ivm::detail::prior_component(priors);
  c.weight = 0.5;
  post.components = {c, c};
  ivm::ComplexityConfig cfg;
  cfg.i_max = 5;
  cfg.w_min_fixed = 0.0;
  const auto out = ivm::vbi_fit(samples, post, priors, cfg);
  REQUIRE(out.size() == 2);
  CHECK(out.components[0].m[0] == out.components[1].m[0]);
  CHECK(out.components[0].V(0, 0) == out.components[1].V(0, 0));
  CHECK(out.components[0].weight == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("an impossible pruning threshold reports failure") {
  const auto samples = draw_scalar(41, 200, {1.0}, {0.0}, {1.0});
  const auto priors = ivm::prior_from_errors(samples);
  ivm::ComplexityConfig cfg;
  cfg.w_min_fixed = 0.9;
  const auto post = ivm::seed_posterior(samples, 2, priors);
  CHECK_THROWS_AS(ivm::vbi_fit(samples, post, priors, cfg), std::runtime_error);
}

TEST_CASE("complexity learning stays small on unimodal data") {
  std::mt19937_64 seed_rng(101);
  const auto priors = scalar_priors(2.0);
  ivm::ComplexityConfig cfg;
  ivm::VariationalPosterior post;  // start empty: the first call seeds K=2
  for (int call = 0; call < 20; ++call) {
    const auto samples = draw_scalar(seed_rng(), 400, {1.0}, {0.0}, {1.0});
    post = ivm::complexity_learning(samples, post, priors, cfg);
    CHECK(static_cast<int>(post.size()) <= cfg.k_max);
  }
  CHECK(post.size() >= 1);
  CHECK(post.size() <= 2);
}

TEST_CASE("complexity learning discovers a far-out second mode") {
  std::mt19937_64 seed_rng(202);
  const auto priors = scalar_priors(2.0);
  ivm::ComplexityConfig cfg;
  ivm::VariationalPosterior post;
  for (int call = 0; call < 12; ++call) {
    const auto samples = draw_scalar(seed_rng(), 500, {0.6, 0.4}, {0.0, 12.0}, {1.0, 1.0});
    post = ivm::complexity_learning(samples, post, priors, cfg);
  }
  REQUIRE(post.size() >= 2);
  CHECK(post.size() <= 3);
  // Both modes must be represented among the component means.
  bool near_zero = false, near_twelve = false;
  for (const auto& c : post.components) {
    if (std::abs(c.m[0]) < 1.5) near_zero = true;
    if (std::abs(c.m[0] - 12.0) < 1.5) near_twelve = true;
  }
  CHECK(near_zero);
  CHECK(near_twelve);
}

TEST_CASE("complexity learning respects the component budget") {
  std::mt19937_64 seed_rng(303);
  const auto priors = scalar_priors(2.0);
  ivm::ComplexityConfig cfg;
  cfg.k_max = 3;
  ivm::VariationalPosterior post;
  for (int call = 0; call < 10; ++call) {
    // Four well-separated modes try to push K beyond the budget.
    const auto samples = draw_scalar(seed_rng(), 600, {0.25, 0.25, 0.25, 0.25},
                                     {0.0, 15.0, 30.0, 45.0}, {1.0, 1.0, 1.0, 1.0});
    post = ivm::complexity_learning(samples, post, priors, cfg);
    CHECK(static_cast<int>(post.size()) <= cfg.k_max);
  }
}

}  // namespace
