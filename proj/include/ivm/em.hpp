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

/**
 * @file em.hpp
 * @brief Expectation-maximization fitting of a Gaussian mixture with a fixed
 *        number of components.
 */

#ifndef IVM_EM_HPP
#define IVM_EM_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "ivm/gmm.hpp"

namespace ivm {

/// Lower bound on component covariance eigenvalues; keeps the M-step stable
/// when a component collapses onto few (or identical) samples.
inline constexpr double kEmCovarianceFloor = 1e-6;

struct EmReport {
  int iterations = 0;
  /// Sample log-likelihood of the mixture as of the last E-step.
  double log_likelihood = -std::numeric_limits<double>::infinity();
  bool converged = false;
  /// True if any component covariance had to be clamped to the floor.
  bool floored = false;
};

namespace detail {

/// Stacks samples into an N x D matrix, validating dimensions.
inline Eigen::MatrixXd stack_samples(const std::vector<Eigen::VectorXd>& samples, int dim) {
  Eigen::MatrixXd x(static_cast<int>(samples.size()), dim);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (samples[n].size() != dim) {
      throw std::invalid_argument("samples disagree on dimension");
    }
    x.row(static_cast<int>(n)) = samples[n].transpose();
  }
  return x;
}

/// Covariance -> upper-triangular sqrt information, with eigenvalues of the
/// covariance clamped at `floor`. Returns true if clamping occurred.
inline bool covariance_to_sqrt_info(const Eigen::MatrixXd& cov, double floor,
                                    Eigen::MatrixXd* sqrt_info) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("em_fit: covariance eigendecomposition failed");
  }
  Eigen::VectorXd evals = eig.eigenvalues();
  bool clamped = false;
  for (int i = 0; i < evals.size(); ++i) {
    if (evals[i] < floor) {
      evals[i] = floor;
      clamped = true;
    }
  }
  const Eigen::MatrixXd info = eig.eigenvectors() * evals.cwiseInverse().asDiagonal() *
                               eig.eigenvectors().transpose();
  *sqrt_info = upper_cholesky(info);
  return clamped;
}

}  // namespace detail

/**
 * Deterministic data-driven initialization: component means at evenly spaced
 * per-dimension sample quantiles, shared diagonal covariance from the sample
 * variance, uniform weights.
 */
inline GaussianMixture seed_mixture(const std::vector<Eigen::VectorXd>& samples, int K) {
  if (samples.empty()) throw std::invalid_argument("seed_mixture: empty sample set");
  if (K < 1) throw std::invalid_argument("seed_mixture: K must be >= 1");
  const int d = static_cast<int>(samples.front().size());
  const int n = static_cast<int>(samples.size());
  Eigen::MatrixXd x = detail::stack_samples(samples, d);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::VectorXd var(d);
  for (int j = 0; j < d; ++j) {
    var[j] = n > 1 ? (x.col(j).array() - mean[j]).square().sum() / (n - 1) : 0.0;
    var[j] = std::max(var[j], kEmCovarianceFloor);
  }
  Eigen::MatrixXd sorted = x;
  for (int j = 0; j < d; ++j) {
    std::vector<double> col(sorted.col(j).data(), sorted.col(j).data() + n);
    std::sort(col.begin(), col.end());
    for (int i = 0; i < n; ++i) sorted(i, j) = col[i];
  }
  GaussianMixture gmm(d);
  for (int k = 0; k < K; ++k) {
    GaussianComponent c;
    c.weight = 1.0 / K;
    c.mean.resize(d);
    const int idx = std::min(n - 1, static_cast<int>((k + 0.5) / K * n));
    for (int j = 0; j < d; ++j) c.mean[j] = sorted(idx, j);
    c.sqrt_info = var.cwiseInverse().cwiseSqrt().asDiagonal();
    gmm.add(std::move(c));
  }
  return gmm;
}

/**
 * Fits a K-component Gaussian mixture to the samples by EM, starting from the
 * supplied initialization. The component count stays fixed; collapsing
 * components are kept alive by the covariance floor.
 */
inline GaussianMixture em_fit(const std::vector<Eigen::VectorXd>& samples, int K,
                              const GaussianMixture& init, int max_iter = 100,
                              double tol = 1e-6, EmReport* report = nullptr) {
  if (samples.empty()) {
    throw std::invalid_argument("em_fit: empty sample set");
  }
  if (K < 1 || static_cast<int>(init.size()) != K) {
    throw std::invalid_argument("em_fit: init must have exactly K components");
  }
  if (static_cast<int>(samples.size()) < K) {
    throw std::invalid_argument("em_fit: fewer samples than components");
  }

  const int N = static_cast<int>(samples.size());
  const int D = init.dim();
  const Eigen::MatrixXd x = detail::stack_samples(samples, D);
  const double log2pi_term = -0.5 * D * std::log(2.0 * std::numbers::pi);

  GaussianMixture gmm = init;
  gmm.validate();

  EmReport local;
  EmReport& rep = report ? *report : local;
  rep = EmReport{};

  Eigen::MatrixXd log_r(N, K);   // log responsibilities, later normalized
  Eigen::MatrixXd r(N, K);
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < max_iter; ++iter) {
    // E-step: responsibilities and the sample log-likelihood in one pass.
    for (int k = 0; k < K; ++k) {
      const auto& c = gmm[k];
      const Eigen::MatrixXd centered = x.rowwise() - c.mean.transpose();
      const Eigen::VectorXd sq = (centered * c.sqrt_info.transpose()).rowwise().squaredNorm();
      const double log_c = (c.weight > 0.0)
                               ? std::log(c.weight) + std::log(c.det_sqrt_info())
                               : -std::numeric_limits<double>::infinity();
      log_r.col(k) = (-0.5 * sq).array() + (log_c + log2pi_term);
    }
    double ll = 0.0;
    for (int n = 0; n < N; ++n) {
      const double lse = detail::log_sum_exp(log_r.row(n).transpose());
      ll += lse;
      r.row(n) = (log_r.row(n).array() - lse).exp();
    }
    rep.log_likelihood = ll;
    rep.iterations = iter + 1;

    // M-step.
    const Eigen::VectorXd nk = r.colwise().sum();
    for (int k = 0; k < K; ++k) {
      auto& c = gmm[k];
      c.weight = nk[k] / N;
      Eigen::MatrixXd cov;
      if (nk[k] < 1e-12) {
        // Dead component: keep its mean, reset the covariance to the floor.
        cov = Eigen::MatrixXd::Identity(D, D) * kEmCovarianceFloor;
        rep.floored = true;
      } else {
        c.mean = (r.col(k).transpose() * x).transpose() / nk[k];
        const Eigen::MatrixXd centered = x.rowwise() - c.mean.transpose();
        cov = centered.transpose() * r.col(k).asDiagonal() * centered / nk[k];
      }
      Eigen::MatrixXd sqrt_info;
      if (detail::covariance_to_sqrt_info(cov, kEmCovarianceFloor, &sqrt_info)) {
        rep.floored = true;
      }
      c.sqrt_info = sqrt_info;
    }

    if (iter > 0 && std::abs(ll - prev_ll) <= tol * (1.0 + std::abs(prev_ll))) {
      rep.converged = true;
      break;
    }
    prev_ll = ll;
  }

  gmm.normalize_weights();
  return gmm;
}

}  // namespace ivm

#endif  // IVM_EM_HPP
