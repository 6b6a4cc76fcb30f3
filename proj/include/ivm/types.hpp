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
 * @file types.hpp
 * @brief Core value types shared by all estimation modules: states,
 *        measurements, residual samples and the sliding state window.
 */

#ifndef IVM_TYPES_HPP
#define IVM_TYPES_HPP

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ivm {

/// Seconds since scenario start. Non-negative, totally ordered.
using Timestamp = double;

/// Wraps an angle to (-pi, pi].
inline double normalize_angle(double a) {
  if (!std::isfinite(a)) {
    throw std::invalid_argument("normalize_angle: non-finite input");
  }
  double r = std::remainder(a, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) {
    r += 2.0 * std::numbers::pi;
  }
  return r;
}

/// Vehicle pose: Cartesian position plus heading about the upright axis.
/// Roll and pitch are fixed at zero throughout.
struct PoseState {
  double x = 0.0;    ///< meters
  double y = 0.0;    ///< meters
  double z = 0.0;    ///< meters
  double phi = 0.0;  ///< heading, radians, kept in (-pi, pi]

  Eigen::Vector3d position() const { return {x, y, z}; }

  /// Rotation of body axes into the world frame (yaw only).
  Eigen::Matrix3d rotation() const {
    const double c = std::cos(phi), s = std::sin(phi);
    Eigen::Matrix3d r;
    r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
    return r;
  }
};

/// Receiver clock error state. The offset is pre-multiplied by the speed
/// of light so it carries meters, never seconds.
struct ClockState {
  double delta = 0.0;      ///< clock offset, meters
  double delta_dot = 0.0;  ///< clock drift, meters/second
};

struct PseudorangeMeasurement {
  Timestamp time = 0.0;
  int sat_id = 0;
  Eigen::Vector3d sat_pos = Eigen::Vector3d::Zero();  ///< meters
  double range = 0.0;                                 ///< meters, > 0
  double nominal_std = 1.0;                           ///< meters, > 0
};

/// Relative motion between consecutive states, expressed in the body
/// frame of the earlier one: displacement along body x/y/z plus the
/// heading increment.
struct OdometryMeasurement {
  Timestamp time = 0.0;  ///< start of the covered interval
  double dt = 1.0;       ///< seconds to the next state, > 0
  double forward = 0.0;
  double lateral = 0.0;
  double vertical = 0.0;
  double dyaw = 0.0;
  Eigen::Matrix4d info = Eigen::Matrix4d::Identity();  ///< SPD
};

/// One raw residual extracted from an optimized window, tagged with the
/// factor it came from.
struct ErrorSample {
  Eigen::VectorXd value;
  std::int64_t source_factor = -1;
  Timestamp time = 0.0;
};

struct StateEntry {
  Timestamp time = 0.0;
  PoseState pose;
  ClockState clock;
};

/// Time-ordered states inside the sliding horizon. Insertions must be
/// strictly increasing in time; trimming drops everything older than
/// `span` seconds before the given reference time.
class StateWindow {
 public:
  explicit StateWindow(double span_seconds = 60.0) : span_(span_seconds) {
    if (!(span_ > 0.0)) {
      throw std::invalid_argument("StateWindow: span must be positive");
    }
  }

  double span() const { return span_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<StateEntry>& entries() const { return entries_; }
  std::vector<StateEntry>& entries() { return entries_; }

  const StateEntry& front() const { return entries_.front(); }
  const StateEntry& back() const { return entries_.back(); }
  StateEntry& back() { return entries_.back(); }
  const StateEntry& operator[](std::size_t i) const { return entries_[i]; }
  StateEntry& operator[](std::size_t i) { return entries_[i]; }

  void push_back(StateEntry e) {
    if (!entries_.empty() && !(e.time > entries_.back().time)) {
      throw std::invalid_argument("StateWindow: timestamps must be strictly increasing");
    }
    entries_.push_back(std::move(e));
  }

  /// Drops states with now - time > span. Removed states are discarded,
  /// not marginalized.
  void trim(Timestamp now) {
    const double cutoff = now - span_;
    std::size_t keep = 0;
    while (keep < entries_.size() && entries_[keep].time < cutoff) {
      ++keep;
    }
    if (keep > 0) {
      entries_.erase(entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(keep));
    }
  }

 private:
  std::vector<StateEntry> entries_;
  double span_;
};

inline Timestamp time_of(const PseudorangeMeasurement& m) { return m.time; }
inline Timestamp time_of(const OdometryMeasurement& m) { return m.time; }
inline Timestamp time_of(const ErrorSample& s) { return s.time; }

/// Trims the window and a matching measurement container to the horizon
/// ending at `now`. Items at exactly now - span are retained. Idempotent
/// for a fixed `now`.
template <typename Measurement>
void trim_window(StateWindow& window, std::vector<Measurement>& measurements, Timestamp now) {
  window.trim(now);
  const double cutoff = now - window.span();
  std::erase_if(measurements, [cutoff](const Measurement& m) { return time_of(m) < cutoff; });
}

}  // namespace ivm

#endif  // IVM_TYPES_HPP
