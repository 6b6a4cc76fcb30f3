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
 * @file scenario.hpp
 * @brief Synthetic urban-GNSS scenario generator: scripted 2-D trajectory,
 *        static satellite constellation, Gaussian measurement noise and
 *        scheduled NLOS corruption with recorded ground truth.
 */

#ifndef IVM_SCENARIO_HPP
#define IVM_SCENARIO_HPP

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivm/gmm.hpp"
#include "ivm/stream_io.hpp"
#include "ivm/types.hpp"

namespace ivm {

/// Constant-speed, constant-yaw-rate piece of the trajectory script.
struct TrajectorySegment {
  double duration = 0.0;   ///< seconds
  double speed = 0.0;      ///< m/s along the heading
  double yaw_rate = 0.0;   ///< rad/s
};

/// Time interval during which a fraction of the satellites per epoch receive
/// an NLOS offset drawn from the (zero-truncated) mixture.
struct NlosInterval {
  double t_begin = 0.0;
  double t_end = 0.0;
  double fraction = 0.0;
  GaussianMixture offsets{1};
};

struct ScenarioSpec {
  double duration = 120.0;          ///< seconds
  double rate = 1.0;                ///< epochs per second
  int satellites = 8;
  std::uint64_t geometry_seed = 1;
  std::uint64_t seed = 1;

  double sigma_pr = 3.0;            ///< pseudorange noise std [m]
  double sigma_odo = 0.05;          ///< body-displacement noise std [m]
  double sigma_odo_yaw = 0.005;     ///< yaw-increment noise std [rad]

  double clock_delta0 = 0.0;        ///< initial clock offset [m]
  double clock_drift0 = 0.1;        ///< initial clock drift [m/s]
  double clock_walk_std = 0.01;     ///< drift random-walk std [m/s per sqrt(s)]

  std::vector<TrajectorySegment> segments;
  std::vector<NlosInterval> nlos;

  /// Validates the scenario; throws listing every offending field.
  void validate() const {
    std::string bad;
    const auto flag = [&bad](bool cond, const char* field) {
      if (cond) {
        if (!bad.empty()) bad += ", ";
        bad += field;
      }
    };
    flag(!(duration > 0.0), "duration");
    flag(!(rate > 0.0), "rate");
    flag(satellites < 1, "satellites");
    flag(sigma_pr < 0.0, "sigma_pr");
    flag(sigma_odo < 0.0, "sigma_odo");
    flag(sigma_odo_yaw < 0.0, "sigma_odo_yaw");
    flag(clock_walk_std < 0.0, "clock_walk_std");
    for (const auto& s : segments) flag(!(s.duration > 0.0), "segment.duration");
    for (const auto& w : nlos) {
      flag(!(w.t_end > w.t_begin), "nlos.interval");
      flag(w.fraction < 0.0 || w.fraction > 1.0, "nlos.fraction");
      try {
        w.offsets.validate();
      } catch (const std::exception&) {
        flag(true, "nlos.offsets");
      }
    }
    if (!bad.empty()) {
      throw std::invalid_argument("ScenarioSpec: invalid fields: " + bad);
    }
  }
};

/// Ground truth for one epoch: true states plus the NLOS offset actually
/// applied to each satellite (0 where the signal was clean).
struct EpochTruth {
  Timestamp time = 0.0;
  PoseState pose;
  ClockState clock;
  std::vector<double> nlos_offset;  ///< indexed by satellite
};

struct GroundTruth {
  std::vector<EpochTruth> epochs;
};

namespace detail {

/// Static constellation on a sphere of radius 2.02e7 m, elevations drawn
/// from [15 deg, 90 deg] so every satellite stays usable from the origin.
inline std::vector<Eigen::Vector3d> make_constellation(int count, std::uint64_t geometry_seed) {
  std::mt19937_64 rng(geometry_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r = 2.02e7;
  const double min_el = 15.0 * std::numbers::pi / 180.0;
  std::vector<Eigen::Vector3d> sats;
  sats.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double az = 2.0 * std::numbers::pi * unit(rng);
    const double el = min_el + (0.5 * std::numbers::pi - min_el) * unit(rng);
    sats.emplace_back(r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az),
                      r * std::sin(el));
  }
  return sats;
}

/// One draw from the scalar mixture, rejected until non-negative
/// (reflections only lengthen the signal path).
inline double sample_truncated_offset(const GaussianMixture& gmm, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    double u = unit(rng);
    std::size_t k = 0;
    for (; k + 1 < gmm.size(); ++k) {
      u -= gmm[k].weight;
      if (u <= 0.0) break;
    }
    const double sigma = 1.0 / gmm[k].sqrt_info(0, 0);
    const double draw = gmm[k].mean[0] + sigma * gauss(rng);
    if (draw >= 0.0) return draw;
  }
  throw std::runtime_error("sample_truncated_offset: mixture mass is almost entirely negative");
}

inline const TrajectorySegment* active_segment(const std::vector<TrajectorySegment>& segments,
                                               double t) {
  double acc = 0.0;
  for (const auto& s : segments) {
    acc += s.duration;
    if (t < acc) return &s;
  }
  return segments.empty() ? nullptr : &segments.back();
}

}  // namespace detail

/**
 * Generates the measurement stream and aligned ground truth for a scenario.
 * Deterministic for a fixed spec (trajectory and constellation from their
 * seeds, noise and NLOS from the main seed).
 */
inline std::pair<StreamData, GroundTruth> generate(const ScenarioSpec& spec) {
  spec.validate();
  const double dt = 1.0 / spec.rate;
  const int n_epochs = static_cast<int>(std::floor(spec.duration * spec.rate)) + 1;
  const auto sats = detail::make_constellation(spec.satellites, spec.geometry_seed);

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // True states by forward integration.
  std::vector<EpochTruth> truth(n_epochs);
  PoseState pose;
  ClockState clock{spec.clock_delta0, spec.clock_drift0};
  for (int i = 0; i < n_epochs; ++i) {
    truth[i].time = i * dt;
    truth[i].pose = pose;
    truth[i].clock = clock;
    truth[i].nlos_offset.assign(spec.satellites, 0.0);
    const auto* seg = detail::active_segment(spec.segments, i * dt);
    const double speed = seg ? seg->speed : 0.0;
    const double yaw_rate = seg ? seg->yaw_rate : 0.0;
    pose.x += speed * std::cos(pose.phi) * dt;
    pose.y += speed * std::sin(pose.phi) * dt;
    pose.phi = normalize_angle(pose.phi + yaw_rate * dt);
    clock.delta += clock.delta_dot * dt;
    clock.delta_dot += spec.clock_walk_std * std::sqrt(dt) * gauss(rng);
  }

  StreamData stream;
  const double reported_std = std::max(spec.sigma_pr, 1e-3);
  for (int i = 0; i < n_epochs; ++i) {
    auto& ep = truth[i];
    const NlosInterval* window = nullptr;
    for (const auto& w : spec.nlos) {
      if (ep.time >= w.t_begin && ep.time < w.t_end) {
        window = &w;
        break;
      }
    }
    for (int s = 0; s < spec.satellites; ++s) {
      double offset = 0.0;
      if (window && unit(rng) < window->fraction) {
        offset = detail::sample_truncated_offset(window->offsets, rng);
      }
      ep.nlos_offset[s] = offset;
      PseudorangeMeasurement m;
      m.time = ep.time;
      m.sat_id = s;
      m.sat_pos = sats[s];
      m.range = (sats[s] - ep.pose.position()).norm() + ep.clock.delta +
                spec.sigma_pr * gauss(rng) + offset;
      m.nominal_std = reported_std;
      stream.pseudoranges.push_back(m);
    }
    if (i + 1 < n_epochs) {
      const auto& next = truth[i + 1];
      const Eigen::Vector3d body =
          ep.pose.rotation().transpose() * (next.pose.position() - ep.pose.position());
      OdometryMeasurement m;
      m.time = ep.time;
      m.dt = dt;
      m.forward = body.x() + spec.sigma_odo * gauss(rng);
      m.lateral = body.y() + spec.sigma_odo * gauss(rng);
      m.vertical = body.z() + spec.sigma_odo * gauss(rng);
      m.dyaw = normalize_angle(next.pose.phi - ep.pose.phi) + spec.sigma_odo_yaw * gauss(rng);
      const double pos_info = 1.0 / std::pow(std::max(spec.sigma_odo, 1e-6), 2);
      const double yaw_info = 1.0 / std::pow(std::max(spec.sigma_odo_yaw, 1e-6), 2);
      m.info = Eigen::Vector4d(pos_info, pos_info, pos_info, yaw_info).asDiagonal();
      stream.odometry.push_back(m);
    }
    GtRecord g;
    g.time = ep.time;
    g.pose = ep.pose;
    stream.ground_truth.push_back(g);
  }
  return {std::move(stream), GroundTruth{std::move(truth)}};
}

/**
 * True per-measurement pseudorange errors (noise plus NLOS offset), i.e. the
 * measured range minus the noise-free prediction at ground truth. Useful for
 * validating fitted mixtures against the generating distribution.
 */
inline std::vector<Eigen::VectorXd> empirical_error_distribution(const GroundTruth& truth,
                                                                 const StreamData& stream) {
  std::vector<Eigen::VectorXd> samples;
  samples.reserve(stream.pseudoranges.size());
  std::size_t epoch = 0;
  for (const auto& m : stream.pseudoranges) {
    while (epoch < truth.epochs.size() && truth.epochs[epoch].time < m.time) ++epoch;
    if (epoch >= truth.epochs.size() || truth.epochs[epoch].time != m.time) {
      throw std::runtime_error("empirical_error_distribution: no ground truth at t=" +
                               std::to_string(m.time));
    }
    const auto& ep = truth.epochs[epoch];
    const double predicted = (m.sat_pos - ep.pose.position()).norm() + ep.clock.delta;
    samples.push_back(Eigen::VectorXd::Constant(1, m.range - predicted));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Scenario file grammar: one key per line, '#' comments.
//
//   duration <s>            rate <hz>           satellites <n>
//   geometry_seed <n>       seed <n>
//   sigma_pr <m>            sigma_odo <m>       sigma_odo_yaw <rad>
//   clock_delta0 <m>        clock_drift0 <m/s>  clock_walk_std <m/s/sqrt(s)>
//   segment <duration> <speed> <yaw_rate>
//   nlos <t_begin> <t_end> <fraction> <K> { <w> <mean> <std> } * K
// ---------------------------------------------------------------------------

inline ScenarioSpec parse_scenario(std::istream& is) {
  ScenarioSpec spec;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key.empty()) continue;
    bool ok = true;
    if (key == "duration") ok = static_cast<bool>(ls >> spec.duration);
    else if (key == "rate") ok = static_cast<bool>(ls >> spec.rate);
    else if (key == "satellites") ok = static_cast<bool>(ls >> spec.satellites);
    else if (key == "geometry_seed") ok = static_cast<bool>(ls >> spec.geometry_seed);
    else if (key == "seed") ok = static_cast<bool>(ls >> spec.seed);
    else if (key == "sigma_pr") ok = static_cast<bool>(ls >> spec.sigma_pr);
    else if (key == "sigma_odo") ok = static_cast<bool>(ls >> spec.sigma_odo);
    else if (key == "sigma_odo_yaw") ok = static_cast<bool>(ls >> spec.sigma_odo_yaw);
    else if (key == "clock_delta0") ok = static_cast<bool>(ls >> spec.clock_delta0);
    else if (key == "clock_drift0") ok = static_cast<bool>(ls >> spec.clock_drift0);
    else if (key == "clock_walk_std") ok = static_cast<bool>(ls >> spec.clock_walk_std);
    else if (key == "segment") {
      TrajectorySegment s;
      ok = static_cast<bool>(ls >> s.duration >> s.speed >> s.yaw_rate);
      if (ok) spec.segments.push_back(s);
    } else if (key == "nlos") {
      NlosInterval w;
      int k = 0;
      ok = static_cast<bool>(ls >> w.t_begin >> w.t_end >> w.fraction >> k) && k >= 1;
      if (ok) {
        std::vector<double> ws(k), means(k), stds(k);
        for (int i = 0; i < k && ok; ++i) {
          ok = static_cast<bool>(ls >> ws[i] >> means[i] >> stds[i]);
        }
        if (ok) {
          w.offsets = make_scalar_mixture(ws, means, stds);
          w.offsets.normalize_weights();
          spec.nlos.push_back(std::move(w));
        }
      }
    } else {
      throw std::runtime_error("parse_scenario: unknown key '" + key + "' at line " +
                               std::to_string(line_no));
    }
    if (!ok) {
      throw std::runtime_error("parse_scenario: malformed value for '" + key + "' at line " +
                               std::to_string(line_no));
    }
  }
  spec.validate();
  return spec;
}

}  // namespace ivm

#endif  // IVM_SCENARIO_HPP
