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
 * @file robust.hpp
 * @brief Error-model layer turning raw factor residuals into weighted
 *        least-squares residuals: Gaussian, Sum-Mixture, Max-Mixture, DCS and
 *        cDCE.
 *
 * All residuals follow the convention cost = sum of squared residual norms,
 * with the conventional 1/2 of the Gaussian exponent folded into the
 * residual itself. A K=1 Sum-Mixture therefore reproduces the plain Gaussian
 * residual magnitude exactly.
 */

#ifndef IVM_ROBUST_HPP
#define IVM_ROBUST_HPP

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <utility>

#include "ivm/gmm.hpp"

namespace ivm {

enum class RobustKind { gaussian, sum_mixture, max_mixture, dcs, cdce };

/// Tagged union of the supported error models. Only the payload matching the
/// kind is meaningful.
struct RobustModel {
  RobustKind kind = RobustKind::gaussian;
  GaussianMixture mixture;        ///< sum_mixture / max_mixture
  Eigen::MatrixXd sqrt_info;      ///< gaussian (optional extra whitening)
  double phi = 1.0;               ///< dcs kernel width
  double sigma = 1.0;             ///< cdce scale multiplier

  static RobustModel Gaussian() { return RobustModel{}; }
  static RobustModel SumMixture(GaussianMixture gmm) {
    RobustModel m;
    m.kind = RobustKind::sum_mixture;
    m.mixture = std::move(gmm);
    m.mixture.validate();
    return m;
  }
  static RobustModel MaxMixture(GaussianMixture gmm) {
    RobustModel m;
    m.kind = RobustKind::max_mixture;
    m.mixture = std::move(gmm);
    m.mixture.validate();
    return m;
  }
  static RobustModel Dcs(double phi) {
    if (!(phi > 0.0)) throw std::invalid_argument("RobustModel: DCS phi must be positive");
    RobustModel m;
    m.kind = RobustKind::dcs;
    m.phi = phi;
    return m;
  }
  static RobustModel Cdce(double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("RobustModel: cDCE sigma must be positive");
    RobustModel m;
    m.kind = RobustKind::cdce;
    m.sigma = sigma;
    return m;
  }
};

/// Weighted Gaussian residual (1/sqrt(2)) * sqrt_info * (e - mu); its squared
/// norm is the familiar half squared Mahalanobis distance.
inline Eigen::VectorXd gaussian_residual(const Eigen::VectorXd& e, const Eigen::VectorXd& mu,
                                         const Eigen::MatrixXd& sqrt_info) {
  if (e.size() != mu.size() || sqrt_info.cols() != e.size()) {
    throw std::invalid_argument("gaussian_residual: dimension mismatch");
  }
  return (sqrt_info * (e - mu)) / std::numbers::sqrt2;
}

/**
 * Scalar Sum-Mixture residual sqrt(-ln(L(e)/gamma)) with the mixture kernel
 * L(e) = sum_k c_k exp(-q_k/2), c_k = w_k det(sqrt_info_k) and the
 * normalizer gamma = sum_k c_k. Evaluated in the log domain with the largest
 * exponent factored out; gamma >= L(e) keeps the argument of ln in (0, 1], a
 * tiny negative rounding excess is clamped to zero.
 */
inline double sum_mixture_residual(const Eigen::VectorXd& e, const GaussianMixture& gmm) {
  const Eigen::VectorXd terms = detail::log_kernel_terms(gmm, e);
  const double log_l = detail::log_sum_exp(terms);
  const double log_gamma = std::log(mixture_normalizer(gmm));
  return std::sqrt(std::max(0.0, log_gamma - log_l));
}

/**
 * Chain-rule Jacobian of sum_mixture_residual with respect to the state, for
 * a raw residual with Jacobian de_dx (D x M). At the exact zero of the
 * residual the derivative is taken as the Gauss-Newton-consistent limit
 * (1/sqrt(2)) * (sqrt_info * de_dx) of the dominant component, which keeps
 * the normal equations identical to the plain Gaussian case.
 */
inline Eigen::RowVectorXd sum_mixture_jacobian(const Eigen::VectorXd& e,
                                               const Eigen::MatrixXd& de_dx,
                                               const GaussianMixture& gmm) {
  if (de_dx.rows() != e.size()) {
    throw std::invalid_argument("sum_mixture_jacobian: de_dx row count mismatch");
  }
  const Eigen::VectorXd terms = detail::log_kernel_terms(gmm, e);
  const double log_l = detail::log_sum_exp(terms);
  const double r = std::sqrt(std::max(0.0, std::log(mixture_normalizer(gmm)) - log_l));

  if (r < 1e-12) {
    int k_star = 0;
    terms.maxCoeff(&k_star);
    const auto& c = gmm[static_cast<std::size_t>(k_star)];
    return (c.sqrt_info * de_dx).row(0) / std::numbers::sqrt2;
  }

  // dr/de = (1/(2r)) * sum_k lambda_k * info_k * (e - mu_k),
  // lambda_k = c_k exp(-q_k/2) / L(e).
  Eigen::RowVectorXd dr_de = Eigen::RowVectorXd::Zero(e.size());
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    const double lambda = std::exp(terms[static_cast<int>(k)] - log_l);
    if (lambda == 0.0) continue;
    const auto& c = gmm[k];
    dr_de += lambda * ((e - c.mean).transpose() * c.info());
  }
  return (dr_de / (2.0 * r)) * de_dx;
}

/**
 * Max-Mixture: picks the dominant component k0 = argmax_k c_k exp(-q_k/2)
 * (ties resolve to the lower index) and returns the residual
 * sqrt(q_k0/2 - ln(c_k0) + ln(max_j c_j)) together with k0.
 */
inline std::pair<double, int> max_mixture_cost(const Eigen::VectorXd& e,
                                               const GaussianMixture& gmm) {
  const Eigen::VectorXd terms = detail::log_kernel_terms(gmm, e);
  int k_star = 0;
  double best = terms[0];
  for (int k = 1; k < terms.size(); ++k) {
    if (terms[k] > best) {
      best = terms[k];
      k_star = k;
    }
  }
  double log_c_max = -std::numeric_limits<double>::infinity();
  for (const auto& c : gmm.components()) {
    if (c.weight > 0.0) {
      log_c_max = std::max(log_c_max, std::log(c.weight) + std::log(c.det_sqrt_info()));
    }
  }
  const auto& cs = gmm[static_cast<std::size_t>(k_star)];
  const double log_c_star = std::log(cs.weight) + std::log(cs.det_sqrt_info());
  const double r2 = 0.5 * cs.squared_mahalanobis(e) - (log_c_star - log_c_max);
  return {std::sqrt(std::max(0.0, r2)), k_star};
}

/// Jacobian of the Max-Mixture residual with the component selection frozen
/// at the current point (selection is locally constant away from ties).
inline Eigen::RowVectorXd max_mixture_jacobian(const Eigen::VectorXd& e,
                                               const Eigen::MatrixXd& de_dx,
                                               const GaussianMixture& gmm) {
  const auto [r, k_star] = max_mixture_cost(e, gmm);
  const auto& c = gmm[static_cast<std::size_t>(k_star)];
  if (r < 1e-12) {
    return (c.sqrt_info * de_dx).row(0) / std::numbers::sqrt2;
  }
  return ((e - c.mean).transpose() * c.info() * de_dx) / (2.0 * r);
}

/// Dynamic covariance scaling weight s = min(1, 2*phi/(phi + r2)) for the
/// squared Mahalanobis residual r2; the scaled residual is sqrt(s) * r.
inline double dcs_weight(double r2, double phi) {
  if (r2 < 0.0) throw std::invalid_argument("dcs_weight: r2 must be non-negative");
  if (!(phi > 0.0)) throw std::invalid_argument("dcs_weight: phi must be positive");
  return std::min(1.0, 2.0 * phi / (phi + r2));
}

/// Closed-form cDCE log cost on the scaled squared residual u = r2/sigma^2:
/// rho(u) = u for u <= 1 and 1 + ln(u) above; continuous with matching
/// one-sided slopes at the knee.
inline double cdce_cost(double r2, double sigma_scale = 1.0) {
  if (r2 < 0.0) throw std::invalid_argument("cdce_cost: r2 must be non-negative");
  if (!(sigma_scale > 0.0)) throw std::invalid_argument("cdce_cost: sigma must be positive");
  const double u = r2 / (sigma_scale * sigma_scale);
  return u <= 1.0 ? u : 1.0 + std::log(u);
}

/// Residual/Jacobian pair in solver convention.
struct AppliedResidual {
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
};

/**
 * Applies an error model to a scalar raw residual e with state Jacobian
 * de_dx (1 x M). `nominal_std` is the per-measurement standard deviation
 * used by the whitening-based models (gaussian, dcs, cdce); the mixture
 * models consume the raw residual directly since their components carry the
 * scale. DCS freezes its weight and cDCE is differentiated exactly.
 */
inline AppliedResidual apply_scalar_model(const RobustModel& model, double e,
                                          const Eigen::RowVectorXd& de_dx,
                                          double nominal_std) {
  if (!(nominal_std > 0.0)) {
    throw std::invalid_argument("apply_scalar_model: nominal_std must be positive");
  }
  AppliedResidual out;
  const Eigen::VectorXd ev = Eigen::VectorXd::Constant(1, e);
  switch (model.kind) {
    case RobustKind::gaussian: {
      const double u = e / nominal_std;
      out.r = Eigen::VectorXd::Constant(1, u / std::numbers::sqrt2);
      out.J = de_dx / (nominal_std * std::numbers::sqrt2);
      return out;
    }
    case RobustKind::sum_mixture: {
      out.r = Eigen::VectorXd::Constant(1, sum_mixture_residual(ev, model.mixture));
      out.J = sum_mixture_jacobian(ev, de_dx, model.mixture);
      return out;
    }
    case RobustKind::max_mixture: {
      out.r = Eigen::VectorXd::Constant(1, max_mixture_cost(ev, model.mixture).first);
      out.J = max_mixture_jacobian(ev, de_dx, model.mixture);
      return out;
    }
    case RobustKind::dcs: {
      const double u = e / nominal_std;
      const double s = dcs_weight(u * u, model.phi);
      const double scale = std::sqrt(s) / (nominal_std * std::numbers::sqrt2);
      out.r = Eigen::VectorXd::Constant(1, std::sqrt(s) * u / std::numbers::sqrt2);
      out.J = de_dx * scale;
      return out;
    }
    case RobustKind::cdce: {
      const double sigma = nominal_std * model.sigma;
      const double u = (e * e) / (sigma * sigma);
      const double rho = cdce_cost(e * e, sigma);
      const double sign = e < 0.0 ? -1.0 : 1.0;
      out.r = Eigen::VectorXd::Constant(1, sign * std::sqrt(0.5 * rho));
      if (u <= 1.0) {
        out.J = de_dx / (sigma * std::numbers::sqrt2);
      } else {
        // d/de of sign * sqrt(rho/2) with rho = 1 + ln(e^2/sigma^2).
        out.J = de_dx / (std::abs(e) * std::sqrt(2.0 * rho));
      }
      return out;
    }
  }
  throw std::logic_error("apply_scalar_model: unknown model kind");
}

}  // namespace ivm

#endif  // IVM_ROBUST_HPP
