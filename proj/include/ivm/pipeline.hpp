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
 * @file pipeline.hpp
 * @brief Online estimation pipeline alternating sliding-window state
 *        optimization with error-model fitting, plus the baseline
 *        configurations (plain Gaussian, DCS, cDCE, fixed-K mixtures).
 *
 * Per epoch: append the dead-reckoned state and its factors, trim the
 * window, extract the raw pseudorange errors at the current linearization
 * point, refit the error model, swap it into the pseudorange factors, and
 * optimize. The model swap happens strictly between solver runs.
 */

#ifndef IVM_PIPELINE_HPP
#define IVM_PIPELINE_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivm/em.hpp"
#include "ivm/factors.hpp"
#include "ivm/robust.hpp"
#include "ivm/scenario.hpp"
#include "ivm/solver.hpp"
#include "ivm/stream_io.hpp"
#include "ivm/types.hpp"
#include "ivm/vbi.hpp"

namespace ivm {

enum class ModelSelector { gaussian, dcs, cdce, sm_em, sm_vbi, sm_em_cl, ivm };

inline const char* selector_name(ModelSelector m) {
  switch (m) {
    case ModelSelector::gaussian: return "gaussian";
    case ModelSelector::dcs: return "dcs";
    case ModelSelector::cdce: return "cdce";
    case ModelSelector::sm_em: return "sm_em";
    case ModelSelector::sm_vbi: return "sm_vbi";
    case ModelSelector::sm_em_cl: return "sm_em_cl";
    case ModelSelector::ivm: return "ivm";
  }
  return "unknown";
}

inline ModelSelector parse_selector(const std::string& name) {
  for (ModelSelector m : {ModelSelector::gaussian, ModelSelector::dcs, ModelSelector::cdce,
                          ModelSelector::sm_em, ModelSelector::sm_vbi, ModelSelector::sm_em_cl,
                          ModelSelector::ivm}) {
    if (name == selector_name(m)) return m;
  }
  throw std::invalid_argument("unknown model selector: " + name);
}

struct PipelineConfig {
  ModelSelector model = ModelSelector::ivm;
  double window_span = 60.0;      ///< seconds
  int fixed_k = 3;                ///< component count for the fixed-K modes
  ComplexityConfig complexity;    ///< k_max, i_max, dL_min, prune policy

  double nu0 = 2.0;               ///< Wishart prior degrees of freedom
  double beta0 = 1e-6;            ///< mean-prior information [1/m^2]
  double v0_floor = 1e-4;         ///< lower bound on the Wishart scale [m^2]
  bool recompute_v0 = true;       ///< refresh V0 from the window errors each fit

  double dcs_phi = 1.0;
  double cdce_sigma = 1.0;

  double clock_offset_sqrt_info = 10.0;  ///< [1/m] per second
  double clock_drift_sqrt_info = 10.0;   ///< [s/m] per second
  double prior_sqrt_info = 1e-3;         ///< weak anchor on the first state

  int em_max_iter = 100;
  double em_tol = 1e-6;

  SolveOptions solver;

  void validate() const {
    if (!(window_span > 0.0)) throw std::invalid_argument("PipelineConfig: window_span");
    if (fixed_k < 1) throw std::invalid_argument("PipelineConfig: fixed_k");
    complexity.validate();
  }
};

struct EpochResult {
  Timestamp time = 0.0;
  PoseState pose;
  ClockState clock;
  std::optional<GaussianMixture> mixture;  ///< snapshot of the active model
  double runtime_s = 0.0;
  SolveReport solve_report;
  bool mixture_fit_failed = false;  ///< previous model kept after a failed fit

  int k() const { return mixture ? static_cast<int>(mixture->size()) : 1; }
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)), problem_(cfg_.window_span) {
    cfg_.validate();
  }

  bool initialized() const { return initialized_; }
  const Problem& problem() const { return problem_; }
  const std::optional<GaussianMixture>& current_mixture() const { return current_mixture_; }

  /**
   * First epoch: plain Gaussian least-squares fix of position and clock
   * offset (weakly anchored yaw and drift), then the error model is fitted
   * twice on the resulting residuals so the adaptive modes start from a
   * settled mixture.
   */
  EpochResult initialize(const std::vector<PseudorangeMeasurement>& epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    if (initialized_) throw std::logic_error("Pipeline: already initialized");
    if (epoch.size() < 4) {
      throw std::runtime_error(
          "Pipeline: initialization needs at least 4 pseudoranges for observability");
    }
    const Timestamp t0 = epoch.front().time;
    for (const auto& m : epoch) {
      if (m.time != t0) throw std::invalid_argument("Pipeline: mixed epoch times at init");
    }

    problem_.window.push_back(StateEntry{t0, PoseState{}, ClockState{}});
    problem_.factors.push_back(Factor::Prior(
        t0, Eigen::VectorXd::Zero(kBlockDim),
        cfg_.prior_sqrt_info * Eigen::MatrixXd::Identity(kBlockDim, kBlockDim),
        next_factor_id_++));
    for (const auto& m : epoch) {
      problem_.factors.push_back(Factor::Pseudorange(m, next_factor_id_++));
    }

    problem_.pr_model = RobustModel::Gaussian();
    EpochResult result;
    result.solve_report = solve(problem_, cfg_.solver);

    if (uses_mixture()) {
      const auto errors = sample_values(compute_window_errors(problem_));
      // Two fitting passes at t=0; the second starts from the first's output.
      fit_model(errors, &result.mixture_fit_failed);
      fit_model(errors, &result.mixture_fit_failed);
      swap_model();
    }

    initialized_ = true;
    finish_result(t0, t_start, &result);
    return result;
  }

  /**
   * One online epoch: new state from odometry dead-reckoning (clock by its
   * drift model), window trim, error extraction, model refit, solve. `odo`
   * may be null when no odometry covers the gap; the clock factor always
   * bridges consecutive epochs.
   */
  EpochResult step(Timestamp t, const std::vector<PseudorangeMeasurement>& epoch,
                   const OdometryMeasurement* odo) {
    const auto t_start = std::chrono::steady_clock::now();
    if (!initialized_) throw std::logic_error("Pipeline: step before initialize");
    const StateEntry prev = problem_.window.back();
    if (!(t > prev.time)) {
      throw std::invalid_argument("Pipeline: epoch time " + std::to_string(t) +
                                  " not after " + std::to_string(prev.time));
    }
    const double dt = t - prev.time;

    StateEntry next;
    next.time = t;
    next.pose = prev.pose;
    if (odo) {
      const Eigen::Vector3d p = prev.pose.position() +
                                prev.pose.rotation() *
                                    Eigen::Vector3d(odo->forward, odo->lateral, odo->vertical);
      next.pose.x = p.x();
      next.pose.y = p.y();
      next.pose.z = p.z();
      next.pose.phi = normalize_angle(prev.pose.phi + odo->dyaw);
    }
    next.clock.delta = prev.clock.delta + prev.clock.delta_dot * dt;
    next.clock.delta_dot = prev.clock.delta_dot;
    problem_.window.push_back(next);

    if (odo) {
      problem_.factors.push_back(Factor::Odometry(*odo, t, next_factor_id_++));
    }
    problem_.factors.push_back(Factor::ClockCced(
        prev.time, t,
        cced_sqrt_info(dt, cfg_.clock_offset_sqrt_info, cfg_.clock_drift_sqrt_info),
        next_factor_id_++));
    for (const auto& m : epoch) {
      if (m.time != t) throw std::invalid_argument("Pipeline: mixed epoch times in step");
      problem_.factors.push_back(Factor::Pseudorange(m, next_factor_id_++));
    }

    problem_.window.trim(t);
    problem_.remove_factors_before(t - problem_.window.span());

    EpochResult result;
    if (uses_mixture()) {
      const auto errors = sample_values(compute_window_errors(problem_));
      fit_model(errors, &result.mixture_fit_failed);
      swap_model();
    }

    result.solve_report = solve(problem_, cfg_.solver);
    finish_result(t, t_start, &result);
    return result;
  }

  /**
   * Runs a whole time-ordered measurement stream. Pseudoranges are grouped
   * into epochs by timestamp; an odometry record is attached to the epoch
   * pair it spans. Strictly causal: results at time t never depend on later
   * records.
   */
  std::vector<EpochResult> run(const StreamData& stream, std::ostream* mixture_log = nullptr) {
    std::vector<EpochResult> results;
    if (stream.pseudoranges.empty()) return results;

    for (std::size_t i = 1; i < stream.pseudoranges.size(); ++i) {
      if (stream.pseudoranges[i].time < stream.pseudoranges[i - 1].time) {
        const auto& m = stream.pseudoranges[i];
        throw std::runtime_error("Pipeline: out-of-order pseudorange at t=" +
                                 std::to_string(m.time) + " sat=" + std::to_string(m.sat_id));
      }
    }
    std::map<Timestamp, OdometryMeasurement> odo_by_start;
    for (std::size_t i = 0; i < stream.odometry.size(); ++i) {
      if (i > 0 && stream.odometry[i].time < stream.odometry[i - 1].time) {
        throw std::runtime_error("Pipeline: out-of-order odometry at t=" +
                                 std::to_string(stream.odometry[i].time));
      }
      odo_by_start.emplace(stream.odometry[i].time, stream.odometry[i]);
    }

    std::size_t i = 0;
    Timestamp prev_epoch = 0.0;
    while (i < stream.pseudoranges.size()) {
      const Timestamp t = stream.pseudoranges[i].time;
      std::vector<PseudorangeMeasurement> epoch;
      while (i < stream.pseudoranges.size() && stream.pseudoranges[i].time == t) {
        epoch.push_back(stream.pseudoranges[i]);
        ++i;
      }
      EpochResult r;
      if (!initialized_) {
        r = initialize(epoch);
      } else {
        const OdometryMeasurement* odo = nullptr;
        auto it = odo_by_start.find(prev_epoch);
        if (it != odo_by_start.end() &&
            std::abs(it->second.time + it->second.dt - t) < 1e-9) {
          odo = &it->second;
        }
        r = step(t, epoch, odo);
      }
      prev_epoch = t;
      if (mixture_log && r.mixture) {
        (*mixture_log) << "epoch " << detail::format_double(r.time) << '\n';
        write_mixture(*mixture_log, *r.mixture);
      }
      results.push_back(std::move(r));
    }
    return results;
  }

 private:
  bool uses_mixture() const {
    switch (cfg_.model) {
      case ModelSelector::sm_em:
      case ModelSelector::sm_vbi:
      case ModelSelector::sm_em_cl:
      case ModelSelector::ivm:
        return true;
      default:
        return false;
    }
  }

  static std::vector<Eigen::VectorXd> sample_values(const std::vector<ErrorSample>& samples) {
    std::vector<Eigen::VectorXd> values;
    values.reserve(samples.size());
    for (const auto& s : samples) values.push_back(s.value);
    return values;
  }

  void refresh_priors(const std::vector<Eigen::VectorXd>& errors) {
    if (!priors_set_ || cfg_.recompute_v0) {
      priors_ = prior_from_errors(errors, cfg_.nu0, cfg_.beta0, cfg_.v0_floor);
      priors_set_ = true;
    }
  }

  /// E-step of the current mode. On failure the previous model is kept and
  /// the failure is reported to the caller.
  void fit_model(const std::vector<Eigen::VectorXd>& errors, bool* failed) {
    try {
      refresh_priors(errors);
      switch (cfg_.model) {
        case ModelSelector::ivm:
          posterior_ = complexity_learning(errors, posterior_, priors_, cfg_.complexity);
          current_mixture_ = expected_mixture(posterior_);
          break;
        case ModelSelector::sm_vbi: {
          ComplexityConfig no_prune = cfg_.complexity;
          no_prune.w_min_fixed = 0.0;
          if (posterior_.empty()) {
            posterior_ = seed_posterior(errors, cfg_.fixed_k, priors_);
          }
          posterior_ = vbi_fit(errors, posterior_, priors_, no_prune);
          current_mixture_ = expected_mixture(posterior_);
          break;
        }
        case ModelSelector::sm_em: {
          const GaussianMixture init = em_mixture_set_
                                            ? em_mixture_
                                            : seed_mixture(errors, cfg_.fixed_k);
          em_mixture_ = em_fit(errors, static_cast<int>(init.size()), init, cfg_.em_max_iter,
                               cfg_.em_tol);
          em_mixture_set_ = true;
          current_mixture_ = em_mixture_;
          break;
        }
        case ModelSelector::sm_em_cl:
          em_complexity_step(errors);
          current_mixture_ = em_mixture_;
          break;
        default:
          break;
      }
    } catch (const std::exception&) {
      *failed = true;  // keep the previous model; online operation continues
    }
  }

  /// Complexity-learning control flow around EM: drop the weakest component
  /// when the budget is full, add a fresh prior-shaped one, fit with fixed
  /// K, then prune by weight.
  void em_complexity_step(const std::vector<Eigen::VectorXd>& errors) {
    const double w_min = cfg_.complexity.prune_threshold(static_cast<int>(errors.size()));
    if (!em_mixture_set_) {
      em_mixture_ = seed_mixture(errors, 1);
      em_mixture_set_ = true;
    }
    auto& comps = em_mixture_.components();
    if (static_cast<int>(comps.size()) >= cfg_.complexity.k_max) {
      std::size_t smallest = 0;
      for (std::size_t j = 1; j < comps.size(); ++j) {
        if (comps[j].weight <= comps[smallest].weight) smallest = j;
      }
      comps.erase(comps.begin() + static_cast<std::ptrdiff_t>(smallest));
      em_mixture_.normalize_weights();
    }
    {
      const double k = static_cast<double>(comps.size());
      for (auto& c : comps) c.weight *= k / (k + 1.0);
      GaussianComponent fresh;
      fresh.weight = 1.0 / (k + 1.0);
      fresh.mean = Eigen::VectorXd::Zero(em_mixture_.dim());
      fresh.sqrt_info = upper_cholesky(wishart_expectation(priors_.nu0, priors_.V0));
      em_mixture_.add(std::move(fresh));
    }
    em_mixture_ = em_fit(errors, static_cast<int>(em_mixture_.size()), em_mixture_,
                         cfg_.em_max_iter, cfg_.em_tol);
    std::erase_if(em_mixture_.components(),
                  [w_min](const GaussianComponent& c) { return c.weight < w_min; });
    if (em_mixture_.components().empty()) {
      em_mixture_ = seed_mixture(errors, 1);
    }
    em_mixture_.normalize_weights();
  }

  void swap_model() {
    switch (cfg_.model) {
      case ModelSelector::gaussian:
        problem_.pr_model = RobustModel::Gaussian();
        break;
      case ModelSelector::dcs:
        problem_.pr_model = RobustModel::Dcs(cfg_.dcs_phi);
        break;
      case ModelSelector::cdce:
        problem_.pr_model = RobustModel::Cdce(cfg_.cdce_sigma);
        break;
      default:
        if (current_mixture_) {
          problem_.pr_model = RobustModel::SumMixture(*current_mixture_);
        }
        break;
    }
  }

  void finish_result(Timestamp t, std::chrono::steady_clock::time_point t_start,
                     EpochResult* result) {
    const auto& entry = problem_.window.back();
    result->time = t;
    result->pose = entry.pose;
    result->clock = entry.clock;
    result->mixture = current_mixture_;
    result->runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  }

  PipelineConfig cfg_;
  Problem problem_;
  MixturePriors priors_;
  bool priors_set_ = false;
  VariationalPosterior posterior_;
  GaussianMixture em_mixture_{1};
  bool em_mixture_set_ = false;
  std::optional<GaussianMixture> current_mixture_;
  std::int64_t next_factor_id_ = 0;
  bool initialized_ = false;
};

// ---------------------------------------------------------------------------
// Per-epoch CSV records: time,x,y,z,phi,delta,delta_dot,K,runtime_s
// ---------------------------------------------------------------------------

struct EstimateRow {
  Timestamp time = 0.0;
  double x = 0.0, y = 0.0, z = 0.0, phi = 0.0;
  double delta = 0.0, delta_dot = 0.0;
  int k = 1;
  double runtime_s = 0.0;
};

inline void write_results_csv(std::ostream& os, const std::vector<EpochResult>& results) {
  os << "time,x,y,z,phi,delta,delta_dot,K,runtime_s\n";
  const auto fmt = detail::format_double;
  for (const auto& r : results) {
    os << fmt(r.time) << ',' << fmt(r.pose.x) << ',' << fmt(r.pose.y) << ',' << fmt(r.pose.z)
       << ',' << fmt(r.pose.phi) << ',' << fmt(r.clock.delta) << ',' << fmt(r.clock.delta_dot)
       << ',' << r.k() << ',' << fmt(r.runtime_s) << '\n';
  }
}

inline std::vector<EstimateRow> read_results_csv(std::istream& is) {
  std::vector<EstimateRow> rows;
  std::string line;
  if (!std::getline(is, line)) return rows;
  if (line != "time,x,y,z,phi,delta,delta_dot,K,runtime_s") {
    throw std::runtime_error("read_results_csv: unexpected header: " + line);
  }
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    EstimateRow row;
    char c;
    if (!(ls >> row.time >> c >> row.x >> c >> row.y >> c >> row.z >> c >> row.phi >> c >>
          row.delta >> c >> row.delta_dot >> c >> row.k >> c >> row.runtime_s)) {
      throw std::runtime_error("read_results_csv: malformed row at line " +
                               std::to_string(line_no));
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ivm

#endif  // IVM_PIPELINE_HPP
