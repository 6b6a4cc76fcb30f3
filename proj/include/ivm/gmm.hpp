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
 * @file gmm.hpp
 * @brief Gaussian mixture over a residual space, parameterized by weight,
 *        mean and the square root of the information matrix per component.
 */

#ifndef IVM_GMM_HPP
#define IVM_GMM_HPP

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ivm {

/// Upper-triangular Cholesky factor U of an SPD matrix, U^T U = A.
inline Eigen::MatrixXd upper_cholesky(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("upper_cholesky: matrix not positive definite");
  }
  return llt.matrixU();
}

struct GaussianComponent {
  double weight = 1.0;                               ///< in [0, 1]
  Eigen::VectorXd mean;                              ///< D-vector
  Eigen::MatrixXd sqrt_info;                         ///< D x D, upper triangular

  /// Information matrix sqrt_info^T sqrt_info.
  Eigen::MatrixXd info() const { return sqrt_info.transpose() * sqrt_info; }

  /// det(sqrt_info); positive for a valid component.
  double det_sqrt_info() const { return sqrt_info.diagonal().prod(); }

  /// Whitened squared distance ||sqrt_info (e - mean)||^2.
  double squared_mahalanobis(const Eigen::VectorXd& e) const {
    return (sqrt_info * (e - mean)).squaredNorm();
  }
};

/// Weighted sum of Gaussian densities; weights sum to one.
class GaussianMixture {
 public:
  GaussianMixture() = default;
  explicit GaussianMixture(int dim) : dim_(dim) {}
  GaussianMixture(int dim, std::vector<GaussianComponent> components)
      : dim_(dim), components_(std::move(components)) {
    validate();
  }

  int dim() const { return dim_; }
  std::size_t size() const { return components_.size(); }
  const std::vector<GaussianComponent>& components() const { return components_; }
  std::vector<GaussianComponent>& components() { return components_; }
  const GaussianComponent& operator[](std::size_t k) const { return components_[k]; }
  GaussianComponent& operator[](std::size_t k) { return components_[k]; }

  void add(GaussianComponent c) {
    if (c.mean.size() != dim_ || c.sqrt_info.rows() != dim_ || c.sqrt_info.cols() != dim_) {
      throw std::invalid_argument("GaussianMixture: component dimension mismatch");
    }
    components_.push_back(std::move(c));
  }

  void normalize_weights() {
    double sum = 0.0;
    for (const auto& c : components_) sum += c.weight;
    if (!(sum > 0.0)) {
      throw std::runtime_error("GaussianMixture: non-positive total weight");
    }
    for (auto& c : components_) c.weight /= sum;
  }

  void validate() const {
    if (components_.empty()) {
      throw std::invalid_argument("GaussianMixture: needs at least one component");
    }
    double sum = 0.0;
    for (const auto& c : components_) {
      if (c.mean.size() != dim_ || c.sqrt_info.rows() != dim_ || c.sqrt_info.cols() != dim_) {
        throw std::invalid_argument("GaussianMixture: component dimension mismatch");
      }
      if (c.weight < 0.0) {
        throw std::invalid_argument("GaussianMixture: negative weight");
      }
      sum += c.weight;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw std::invalid_argument("GaussianMixture: weights must sum to 1");
    }
  }

 private:
  int dim_ = 1;
  std::vector<GaussianComponent> components_;
};

/// Convenience constructor for scalar mixtures from (w, mean, std) triples.
inline GaussianMixture make_scalar_mixture(
    const std::vector<double>& weights, const std::vector<double>& means,
    const std::vector<double>& stddevs) {
  if (weights.size() != means.size() || weights.size() != stddevs.size()) {
    throw std::invalid_argument("make_scalar_mixture: size mismatch");
  }
  GaussianMixture gmm(1);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    GaussianComponent c;
    c.weight = weights[k];
    c.mean = Eigen::VectorXd::Constant(1, means[k]);
    c.sqrt_info = Eigen::MatrixXd::Constant(1, 1, 1.0 / stddevs[k]);
    gmm.add(c);
  }
  return gmm;
}

namespace detail {

/// log(sum_k exp(x_k)) with the largest exponent factored out.
inline double log_sum_exp(const Eigen::VectorXd& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf stays -inf
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

/// Per-component log kernels ln(c_k) - q_k/2 with c_k = w_k det(sqrt_info_k).
inline Eigen::VectorXd log_kernel_terms(const GaussianMixture& gmm, const Eigen::VectorXd& e) {
  if (e.size() != gmm.dim()) {
    throw std::invalid_argument("mixture evaluation: point dimension mismatch");
  }
  Eigen::VectorXd terms(static_cast<int>(gmm.size()));
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    const auto& c = gmm[k];
    if (c.weight <= 0.0) {
      terms[static_cast<int>(k)] = -std::numeric_limits<double>::infinity();
      continue;
    }
    terms[static_cast<int>(k)] =
        std::log(c.weight) + std::log(c.det_sqrt_info()) - 0.5 * c.squared_mahalanobis(e);
  }
  return terms;
}

}  // namespace detail

/// Unnormalized mixture kernel L(e) = sum_k c_k exp(-q_k/2).
inline double mixture_kernel(const GaussianMixture& gmm, const Eigen::VectorXd& e) {
  return std::exp(detail::log_sum_exp(detail::log_kernel_terms(gmm, e)));
}

/// Normalization constant gamma = sum_k w_k det(sqrt_info_k). Upper bounds
/// the kernel L(e) everywhere.
inline double mixture_normalizer(const GaussianMixture& gmm) {
  double gamma = 0.0;
  for (const auto& c : gmm.components()) gamma += c.weight * c.det_sqrt_info();
  return gamma;
}

/// True probability density of the mixture at e, including the
/// (2 pi)^(-D/2) constant.
inline double mixture_density(const GaussianMixture& gmm, const Eigen::VectorXd& e) {
  const double log_norm = -0.5 * gmm.dim() * std::log(2.0 * std::numbers::pi);
  return std::exp(log_norm + detail::log_sum_exp(detail::log_kernel_terms(gmm, e)));
}

// ---------------------------------------------------------------------------
// Plain-text serialization, one component per line:
//   gmm <dim> <K>
//   component <w> <mean_1..mean_D> <info row-major D*D entries>
// Values are printed with 17 significant digits so parsing recovers them
// exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_mixture(std::ostream& os, const GaussianMixture& gmm) {
  os << "gmm " << gmm.dim() << ' ' << gmm.size() << '\n';
  for (const auto& c : gmm.components()) {
    os << "component " << detail::format_double(c.weight);
    for (int i = 0; i < c.mean.size(); ++i) os << ' ' << detail::format_double(c.mean[i]);
    const Eigen::MatrixXd info = c.info();
    for (int r = 0; r < info.rows(); ++r)
      for (int col = 0; col < info.cols(); ++col) os << ' ' << detail::format_double(info(r, col));
    os << '\n';
  }
}

inline GaussianMixture read_mixture(std::istream& is) {
  std::string tag;
  int dim = 0;
  std::size_t count = 0;
  if (!(is >> tag >> dim >> count) || tag != "gmm") {
    throw std::runtime_error("read_mixture: malformed header");
  }
  GaussianMixture gmm(dim);
  for (std::size_t k = 0; k < count; ++k) {
    if (!(is >> tag) || tag != "component") {
      throw std::runtime_error("read_mixture: expected component line");
    }
    GaussianComponent c;
    c.mean.resize(dim);
    Eigen::MatrixXd info(dim, dim);
    if (!(is >> c.weight)) throw std::runtime_error("read_mixture: bad weight");
    for (int i = 0; i < dim; ++i)
      if (!(is >> c.mean[i])) throw std::runtime_error("read_mixture: bad mean");
    for (int r = 0; r < dim; ++r)
      for (int col = 0; col < dim; ++col)
        if (!(is >> info(r, col))) throw std::runtime_error("read_mixture: bad info entry");
    c.sqrt_info = upper_cholesky(info);
    gmm.add(std::move(c));
  }
  return gmm;
}

inline std::string serialize_mixture(const GaussianMixture& gmm) {
  std::ostringstream os;
  write_mixture(os, gmm);
  return os.str();
}

inline GaussianMixture parse_mixture(const std::string& text) {
  std::istringstream is(text);
  return read_mixture(is);
}

}  // namespace ivm

#endif  // IVM_GMM_HPP
