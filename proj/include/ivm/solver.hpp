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
 * @file solver.hpp
 * @brief Levenberg-Marquardt optimizer over the sliding-window factor graph.
 *
 * Each window epoch contributes one 6-dimensional variable block
 * (x, y, z, phi, delta, delta_dot). The normal equations are block
 * tridiagonal, so they are assembled sparsely and factorized with a natural
 * ordering Cholesky decomposition. All evaluation runs in a fixed factor
 * order, making repeated solves bit-reproducible.
 */

#ifndef IVM_SOLVER_HPP
#define IVM_SOLVER_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivm/factors.hpp"
#include "ivm/robust.hpp"
#include "ivm/types.hpp"

namespace ivm {

inline constexpr int kBlockDim = 6;  ///< pose (4) + clock (2) per epoch

struct SolveOptions {
  int max_iterations = 100;
  double lambda_init = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double tol_rel_cost = 1e-8;
  double tol_gradient = 1e-10;
  int max_consecutive_rejects = 20;
  std::ostream* log = nullptr;  ///< optional per-iteration diagnostics
};

struct SolveReport {
  int iterations = 0;       ///< linearizations visited
  int accepted_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  bool rank_deficient = false;
  std::string termination_reason;
};

/**
 * Sliding-window least-squares problem: states plus factors plus the shared
 * pseudorange error model. The model may only be replaced between solves.
 */
class Problem {
 public:
  explicit Problem(double span_seconds = 60.0) : window(span_seconds) {}

  StateWindow window;
  std::vector<Factor> factors;
  RobustModel pr_model = RobustModel::Gaussian();

  /// Variable-block index of the state at time t.
  int block_index(Timestamp t) const {
    const auto& es = window.entries();
    auto it = std::lower_bound(es.begin(), es.end(), t,
                               [](const StateEntry& e, Timestamp v) { return e.time < v; });
    if (it == es.end() || it->time != t) {
      throw std::invalid_argument("Problem: factor references a state outside the window");
    }
    return static_cast<int>(it - es.begin());
  }

  /// Drops factors that reference any state older than the cutoff time.
  void remove_factors_before(Timestamp cutoff) {
    std::erase_if(factors, [cutoff](const Factor& f) { return f.time_a < cutoff; });
  }
};

namespace detail {

inline PoseState pose_from(const Eigen::VectorXd& x, int block) {
  PoseState p;
  p.x = x[kBlockDim * block + 0];
  p.y = x[kBlockDim * block + 1];
  p.z = x[kBlockDim * block + 2];
  p.phi = x[kBlockDim * block + 3];
  return p;
}

inline ClockState clock_from(const Eigen::VectorXd& x, int block) {
  ClockState c;
  c.delta = x[kBlockDim * block + 4];
  c.delta_dot = x[kBlockDim * block + 5];
  return c;
}

inline Eigen::VectorXd flatten(const StateWindow& window) {
  Eigen::VectorXd x(kBlockDim * static_cast<int>(window.size()));
  for (std::size_t i = 0; i < window.size(); ++i) {
    const auto& e = window[i];
    x.segment<kBlockDim>(kBlockDim * static_cast<int>(i))
        << e.pose.x, e.pose.y, e.pose.z, e.pose.phi, e.clock.delta, e.clock.delta_dot;
  }
  return x;
}

inline void unflatten(const Eigen::VectorXd& x, StateWindow& window) {
  for (std::size_t i = 0; i < window.size(); ++i) {
    auto& e = window[i];
    const int b = kBlockDim * static_cast<int>(i);
    e.pose.x = x[b + 0];
    e.pose.y = x[b + 1];
    e.pose.z = x[b + 2];
    e.pose.phi = normalize_angle(x[b + 3]);
    e.clock.delta = x[b + 4];
    e.clock.delta_dot = x[b + 5];
  }
}

/// One factor evaluated at the current point: residual plus dense Jacobian
/// blocks for the (at most two) connected variables.
struct FactorEval {
  Eigen::VectorXd r;
  int block_a = -1;
  int block_b = -1;
  Eigen::MatrixXd ja;  ///< r.size() x kBlockDim
  Eigen::MatrixXd jb;
};

inline const char* kind_name(FactorKind k) {
  switch (k) {
    case FactorKind::pseudorange: return "pseudorange";
    case FactorKind::odometry: return "odometry";
    case FactorKind::clock_cced: return "clock_cced";
    case FactorKind::prior: return "prior";
  }
  return "unknown";
}

inline void evaluate_factor(const Problem& p, const Factor& f, const Eigen::VectorXd& x,
                            int block_a, int block_b, bool with_jacobian, FactorEval* out) {
  out->block_a = block_a;
  out->block_b = block_b;
  switch (f.kind) {
    case FactorKind::pseudorange: {
      const PoseState pose = pose_from(x, block_a);
      const ClockState clock = clock_from(x, block_a);
      Eigen::RowVector4d j_pose;
      Eigen::RowVector2d j_clock;
      const double op = pseudorange_error(pose, clock, f.pr, &j_pose, &j_clock);
      // The factor residual lives in measured-minus-predicted space so that
      // NLOS path lengthening shows up as a positive error mode.
      const double e = -op;
      Eigen::RowVectorXd de_dx(kBlockDim);
      de_dx << -j_pose, -j_clock;
      const AppliedResidual applied =
          apply_scalar_model(p.pr_model, e, de_dx, f.pr.nominal_std);
      out->r = applied.r;
      if (with_jacobian) out->ja = applied.J;
      return;
    }
    case FactorKind::odometry: {
      const PoseState pose_t = pose_from(x, block_a);
      const PoseState pose_t1 = pose_from(x, block_b);
      Eigen::Matrix4d j_t, j_t1;
      const Eigen::Vector4d e = odometry_error(pose_t, pose_t1, f.odo,
                                               with_jacobian ? &j_t : nullptr,
                                               with_jacobian ? &j_t1 : nullptr);
      const Eigen::Matrix4d u = upper_cholesky(f.odo.info);
      out->r = (u * e) / std::numbers::sqrt2;
      if (with_jacobian) {
        out->ja = Eigen::MatrixXd::Zero(4, kBlockDim);
        out->jb = Eigen::MatrixXd::Zero(4, kBlockDim);
        out->ja.leftCols<4>() = (u * j_t) / std::numbers::sqrt2;
        out->jb.leftCols<4>() = (u * j_t1) / std::numbers::sqrt2;
      }
      return;
    }
    case FactorKind::clock_cced: {
      const ClockState c0 = clock_from(x, block_a);
      const ClockState c1 = clock_from(x, block_b);
      const double dt = f.time_b - f.time_a;
      Eigen::Matrix2d j_t, j_t1;
      const Eigen::Vector2d e = clock_cced_error(c0, c1, dt,
                                                 with_jacobian ? &j_t : nullptr,
                                                 with_jacobian ? &j_t1 : nullptr);
      out->r = (f.clock_sqrt_info * e) / std::numbers::sqrt2;
      if (with_jacobian) {
        out->ja = Eigen::MatrixXd::Zero(2, kBlockDim);
        out->jb = Eigen::MatrixXd::Zero(2, kBlockDim);
        out->ja.rightCols<2>() = (f.clock_sqrt_info * j_t) / std::numbers::sqrt2;
        out->jb.rightCols<2>() = (f.clock_sqrt_info * j_t1) / std::numbers::sqrt2;
      }
      return;
    }
    case FactorKind::prior: {
      const Eigen::VectorXd state = x.segment<kBlockDim>(kBlockDim * block_a);
      out->r = prior_error(state, f.prior_mean, f.prior_sqrt_info) / std::numbers::sqrt2;
      if (with_jacobian) {
        out->ja = f.prior_sqrt_info / std::numbers::sqrt2;
      }
      return;
    }
  }
  throw std::logic_error("evaluate_factor: unknown factor kind");
}

/// Resolves the variable-block indices of every factor once per solve.
inline std::vector<std::pair<int, int>> resolve_blocks(const Problem& p) {
  std::vector<std::pair<int, int>> blocks;
  blocks.reserve(p.factors.size());
  for (const auto& f : p.factors) {
    const int a = p.block_index(f.time_a);
    const int b =
        (f.kind == FactorKind::odometry || f.kind == FactorKind::clock_cced)
            ? p.block_index(f.time_b)
            : -1;
    blocks.emplace_back(a, b);
  }
  return blocks;
}

inline double cost_at(const Problem& p, const Eigen::VectorXd& x,
                      const std::vector<std::pair<int, int>>& blocks) {
  double cost = 0.0;
  FactorEval ev;
  for (std::size_t i = 0; i < p.factors.size(); ++i) {
    evaluate_factor(p, p.factors[i], x, blocks[i].first, blocks[i].second, false, &ev);
    const double c = ev.r.squaredNorm();
    if (!std::isfinite(c)) {
      throw std::runtime_error(std::string("evaluate_cost: non-finite residual from ") +
                               kind_name(p.factors[i].kind) + " factor id=" +
                               std::to_string(p.factors[i].id));
    }
    cost += c;
  }
  return cost;
}

}  // namespace detail

/// Total cost: sum of squared robust residual norms over all factors at the
/// problem's current states.
inline double evaluate_cost(const Problem& p) {
  const Eigen::VectorXd x = detail::flatten(p.window);
  return detail::cost_at(p, x, detail::resolve_blocks(p));
}

/// Raw (pre-robust-model) pseudorange residuals of the window in
/// measured-minus-predicted convention, one sample per pseudorange factor.
inline std::vector<ErrorSample> compute_window_errors(const Problem& p) {
  std::vector<ErrorSample> samples;
  for (const auto& f : p.factors) {
    if (f.kind != FactorKind::pseudorange) continue;
    const int block = p.block_index(f.time_a);
    const auto& entry = p.window[static_cast<std::size_t>(block)];
    const double op = pseudorange_error(entry.pose, entry.clock, f.pr);
    ErrorSample s;
    s.value = Eigen::VectorXd::Constant(1, -op);
    s.source_factor = f.id;
    s.time = f.time_a;
    samples.push_back(std::move(s));
  }
  return samples;
}

/**
 * Levenberg-Marquardt with multiplicative damping on the diagonal of the
 * normal equations. Accepted steps strictly decrease the cost; convergence
 * is declared on a small relative cost change, a small gradient infinity
 * norm, or when a trial step can no longer change the cost measurably.
 */
inline SolveReport solve(Problem& p, const SolveOptions& opts = {}) {
  SolveReport report;
  const int n_states = static_cast<int>(p.window.size());
  if (n_states == 0) {
    report.converged = true;
    report.termination_reason = "empty_problem";
    return report;
  }
  const int n = kBlockDim * n_states;
  const auto blocks = detail::resolve_blocks(p);

  Eigen::VectorXd x = detail::flatten(p.window);
  double cost = detail::cost_at(p, x, blocks);
  if (!std::isfinite(cost)) {
    throw std::invalid_argument("solve: non-finite cost at the initial point");
  }
  report.initial_cost = cost;
  report.final_cost = cost;

  using Sparse = Eigen::SparseMatrix<double>;
  Eigen::SimplicialLLT<Sparse, Eigen::Lower, Eigen::NaturalOrdering<int>> llt;
  bool pattern_analyzed = false;

  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd g(n);
  Sparse h(n, n);

  // Builds H = J^T J and g = J^T r at x. Returns false on non-finite values.
  const auto linearize = [&](const Eigen::VectorXd& at) {
    triplets.clear();
    g.setZero();
    detail::FactorEval ev;
    for (std::size_t i = 0; i < p.factors.size(); ++i) {
      detail::evaluate_factor(p, p.factors[i], at, blocks[i].first, blocks[i].second, true, &ev);
      const int a = kBlockDim * ev.block_a;
      const Eigen::MatrixXd haa = ev.ja.transpose() * ev.ja;
      for (int r = 0; r < kBlockDim; ++r)
        for (int c = 0; c < kBlockDim; ++c) triplets.emplace_back(a + r, a + c, haa(r, c));
      g.segment<kBlockDim>(a) += ev.ja.transpose() * ev.r;
      if (ev.block_b >= 0) {
        const int b = kBlockDim * ev.block_b;
        const Eigen::MatrixXd hbb = ev.jb.transpose() * ev.jb;
        const Eigen::MatrixXd hab = ev.ja.transpose() * ev.jb;
        for (int r = 0; r < kBlockDim; ++r)
          for (int c = 0; c < kBlockDim; ++c) {
            triplets.emplace_back(b + r, b + c, hbb(r, c));
            triplets.emplace_back(a + r, b + c, hab(r, c));
            triplets.emplace_back(b + r, a + c, hab(c, r));
          }
        g.segment<kBlockDim>(b) += ev.jb.transpose() * ev.r;
      }
    }
    // Explicit diagonal so damping always has an entry to land on.
    for (int i = 0; i < n; ++i) triplets.emplace_back(i, i, 0.0);
    h.setFromTriplets(triplets.begin(), triplets.end());
  };

  linearize(x);

  // Rank probe at the initial point: an undamped factorization failure means
  // the window is not fully observable; damping still produces steps.
  {
    llt.analyzePattern(h);
    pattern_analyzed = true;
    llt.factorize(h);
    if (llt.info() != Eigen::Success) report.rank_deficient = true;
  }

  double lambda = opts.lambda_init;
  int consecutive_rejects = 0;
  Eigen::VectorXd diag = h.diagonal();

  for (report.iterations = 1; report.iterations <= opts.max_iterations; ++report.iterations) {
    if (g.lpNorm<Eigen::Infinity>() < opts.tol_gradient) {
      report.converged = true;
      report.termination_reason = "gradient_norm";
      break;
    }

    bool accepted = false;
    bool plateau = false;
    while (!accepted) {
      Sparse hd = h;
      for (int i = 0; i < n; ++i) {
        hd.coeffRef(i, i) += lambda * std::max(diag[i], 1e-8);
      }
      if (!pattern_analyzed) {
        llt.analyzePattern(hd);
        pattern_analyzed = true;
      }
      llt.factorize(hd);
      bool trial_ok = llt.info() == Eigen::Success;
      double trial_cost = std::numeric_limits<double>::infinity();
      Eigen::VectorXd x_trial;
      if (trial_ok) {
        const Eigen::VectorXd dx = llt.solve(-g);
        x_trial = x + dx;
        for (int i = 0; i < n_states; ++i) {
          x_trial[kBlockDim * i + 3] = normalize_angle(x_trial[kBlockDim * i + 3]);
        }
        trial_cost = detail::cost_at(p, x_trial, blocks);
        trial_ok = std::isfinite(trial_cost);
      }

      if (opts.log) {
        (*opts.log) << "iter " << report.iterations << " cost " << cost << " trial "
                    << trial_cost << " lambda " << lambda << '\n';
      }

      if (trial_ok && trial_cost < cost) {
        const double rel_change = (cost - trial_cost) / std::max(cost, 1e-300);
        x = x_trial;
        cost = trial_cost;
        lambda = std::max(lambda / opts.lambda_down, 1e-12);
        consecutive_rejects = 0;
        ++report.accepted_steps;
        accepted = true;
        if (rel_change < opts.tol_rel_cost) {
          report.converged = true;
          report.termination_reason = "relative_cost_change";
        }
      } else if (trial_ok && std::abs(trial_cost - cost) <= opts.tol_rel_cost * std::max(cost, 1.0)) {
        // The step changes nothing measurable: we are at a stationary point
        // that the gradient test alone did not certify.
        report.converged = true;
        report.termination_reason = "relative_cost_change";
        plateau = true;
        break;
      } else {
        lambda *= opts.lambda_up;
        if (++consecutive_rejects >= opts.max_consecutive_rejects) {
          report.termination_reason = "numerical_failure";
          report.final_cost = cost;
          detail::unflatten(x, p.window);
          return report;
        }
      }
    }
    if (report.converged || plateau) break;
    linearize(x);
    diag = h.diagonal();
  }

  report.iterations = std::min(report.iterations, opts.max_iterations);
  if (!report.converged && report.termination_reason.empty()) {
    report.termination_reason = "max_iterations";
  }
  report.final_cost = cost;
  detail::unflatten(x, p.window);
  return report;
}

}  // namespace ivm

#endif  // IVM_SOLVER_HPP
