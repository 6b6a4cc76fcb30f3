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
 * @file factors.hpp
 * @brief Raw residual functions and analytic Jacobians for pseudorange,
 *        odometry, clock-drift and prior factors.
 *
 * State blocks are ordered (x, y, z, phi) for poses and (delta, delta_dot)
 * for receiver clocks. Jacobian out-parameters may be null when only the
 * residual is needed.
 */

#ifndef IVM_FACTORS_HPP
#define IVM_FACTORS_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "ivm/types.hpp"

namespace ivm {

/**
 * Pseudorange residual ||sat - p|| + delta - range in meters. The position
 * Jacobian is the negative unit line-of-sight vector; the clock-offset
 * Jacobian is one. Yaw and clock drift do not enter.
 */
inline double pseudorange_error(const PoseState& pose, const ClockState& clock,
                                const PseudorangeMeasurement& z,
                                Eigen::RowVector4d* j_pose = nullptr,
                                Eigen::RowVector2d* j_clock = nullptr) {
  const Eigen::Vector3d diff = z.sat_pos - pose.position();
  const double dist = diff.norm();
  if (dist < 1e-9) {
    throw std::invalid_argument("pseudorange_error: satellite coincides with receiver");
  }
  if (j_pose) {
    j_pose->head<3>() = -(diff / dist).transpose();
    (*j_pose)[3] = 0.0;
  }
  if (j_clock) {
    *j_clock << 1.0, 0.0;
  }
  return dist + clock.delta - z.range;
}

/**
 * Odometry residual: the world displacement rotated into the body frame of
 * the first pose, minus the measured (forward, lateral, vertical) increment,
 * stacked with the normalized yaw increment error.
 */
inline Eigen::Vector4d odometry_error(const PoseState& pose_t, const PoseState& pose_t1,
                                      const OdometryMeasurement& z,
                                      Eigen::Matrix4d* j_t = nullptr,
                                      Eigen::Matrix4d* j_t1 = nullptr) {
  const Eigen::Vector3d d = pose_t1.position() - pose_t.position();
  const Eigen::Matrix3d r_wb = pose_t.rotation();        // body -> world
  const Eigen::Matrix3d r_bw = r_wb.transpose();          // world -> body

  Eigen::Vector4d e;
  e.head<3>() = r_bw * d - Eigen::Vector3d(z.forward, z.lateral, z.vertical);
  e[3] = normalize_angle(pose_t1.phi - pose_t.phi - z.dyaw);

  if (j_t || j_t1) {
    // d(R(phi)^T)/dphi applied to the displacement.
    const double c = std::cos(pose_t.phi);
    const double s = std::sin(pose_t.phi);
    Eigen::Matrix3d dr_bw;
    dr_bw << -s, c, 0.0,
             -c, -s, 0.0,
              0.0, 0.0, 0.0;
    if (j_t) {
      j_t->setZero();
      j_t->topLeftCorner<3, 3>() = -r_bw;
      j_t->block<3, 1>(0, 3) = dr_bw * d;
      (*j_t)(3, 3) = -1.0;
    }
    if (j_t1) {
      j_t1->setZero();
      j_t1->topLeftCorner<3, 3>() = r_bw;
      (*j_t1)(3, 3) = 1.0;
    }
  }
  return e;
}

/**
 * Constant-clock-error-drift residual between consecutive clock states:
 * [delta_1 - (delta_0 + delta_dot_0 * dt); delta_dot_1 - delta_dot_0].
 * The model is linear, so the Jacobians are constant.
 */
inline Eigen::Vector2d clock_cced_error(const ClockState& clock_t, const ClockState& clock_t1,
                                        double dt,
                                        Eigen::Matrix2d* j_t = nullptr,
                                        Eigen::Matrix2d* j_t1 = nullptr) {
  if (!(dt > 0.0)) {
    throw std::invalid_argument("clock_cced_error: dt must be positive");
  }
  Eigen::Vector2d e;
  e[0] = clock_t1.delta - (clock_t.delta + clock_t.delta_dot * dt);
  e[1] = clock_t1.delta_dot - clock_t.delta_dot;
  if (j_t) {
    *j_t << -1.0, -dt,
             0.0, -1.0;
  }
  if (j_t1) {
    j_t1->setIdentity();
  }
  return e;
}

/// Prior residual sqrt_info * (state - mean); the Jacobian is sqrt_info.
inline Eigen::VectorXd prior_error(const Eigen::VectorXd& state, const Eigen::VectorXd& mean,
                                   const Eigen::MatrixXd& sqrt_info) {
  if (state.size() != mean.size() || sqrt_info.cols() != state.size()) {
    throw std::invalid_argument("prior_error: dimension mismatch");
  }
  return sqrt_info * (state - mean);
}

/// Default CCED noise: sqrt information diag(10, 10) per second, scaled by
/// 1/sqrt(dt) so longer gaps are weighted less.
inline Eigen::Matrix2d cced_sqrt_info(double dt, double offset_sqrt_info = 10.0,
                                      double drift_sqrt_info = 10.0) {
  if (!(dt > 0.0)) {
    throw std::invalid_argument("cced_sqrt_info: dt must be positive");
  }
  Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
  m(0, 0) = offset_sqrt_info / std::sqrt(dt);
  m(1, 1) = drift_sqrt_info / std::sqrt(dt);
  return m;
}

enum class FactorKind { pseudorange, odometry, clock_cced, prior };

/**
 * One residual term of the window problem. Factors reference their states by
 * timestamp so that window trimming does not invalidate them; the solver
 * resolves timestamps to variable blocks at assembly time. Pseudorange
 * factors share one error model owned by the problem; the other kinds are
 * plain Gaussian.
 */
struct Factor {
  FactorKind kind = FactorKind::prior;
  Timestamp time_a = 0.0;        ///< first connected state
  Timestamp time_b = 0.0;        ///< second connected state (binary factors)
  std::int64_t id = -1;

  PseudorangeMeasurement pr;     ///< kind == pseudorange
  OdometryMeasurement odo;       ///< kind == odometry
  Eigen::Matrix2d clock_sqrt_info = Eigen::Matrix2d::Identity();  ///< kind == clock_cced
  Eigen::VectorXd prior_mean;    ///< kind == prior (full 6-dim state block)
  Eigen::MatrixXd prior_sqrt_info;

  static Factor Pseudorange(const PseudorangeMeasurement& z, std::int64_t id) {
    Factor f;
    f.kind = FactorKind::pseudorange;
    f.time_a = z.time;
    f.pr = z;
    f.id = id;
    return f;
  }
  static Factor Odometry(const OdometryMeasurement& z, Timestamp t_next, std::int64_t id) {
    Factor f;
    f.kind = FactorKind::odometry;
    f.time_a = z.time;
    f.time_b = t_next;
    f.odo = z;
    f.id = id;
    return f;
  }
  static Factor ClockCced(Timestamp t, Timestamp t_next, const Eigen::Matrix2d& sqrt_info,
                          std::int64_t id) {
    Factor f;
    f.kind = FactorKind::clock_cced;
    f.time_a = t;
    f.time_b = t_next;
    f.clock_sqrt_info = sqrt_info;
    f.id = id;
    return f;
  }
  static Factor Prior(Timestamp t, const Eigen::VectorXd& mean, const Eigen::MatrixXd& sqrt_info,
                      std::int64_t id) {
    Factor f;
    f.kind = FactorKind::prior;
    f.time_a = t;
    f.prior_mean = mean;
    f.prior_sqrt_info = sqrt_info;
    f.id = id;
    return f;
  }
};

}  // namespace ivm

#endif  // IVM_FACTORS_HPP
