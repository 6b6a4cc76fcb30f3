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
 * @file evaluate.hpp
 * @brief Absolute trajectory error in the local XY-plane and model
 *        comparison tables.
 */

#ifndef IVM_EVALUATE_HPP
#define IVM_EVALUATE_HPP

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivm/pipeline.hpp"
#include "ivm/stream_io.hpp"

namespace ivm {

struct AteReport {
  double mean_ate = 0.0;             ///< meters
  double median_ate = 0.0;           ///< meters
  std::vector<Timestamp> times;
  std::vector<double> series;        ///< per-epoch ATE, aligned with times
  double total_runtime_s = 0.0;      ///< summed per-epoch pipeline runtime
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/**
 * Per-epoch XY-plane distance between estimate and ground truth. Estimate
 * timestamps must match truth timestamps exactly; no interpolation or
 * trajectory alignment is performed (the positioning problem is globally
 * referenced).
 */
inline AteReport ate(const std::vector<EstimateRow>& estimates,
                     const std::vector<GtRecord>& truth) {
  std::map<Timestamp, const GtRecord*> by_time;
  for (const auto& g : truth) by_time[g.time] = &g;

  AteReport report;
  double sum = 0.0;
  for (const auto& e : estimates) {
    const auto it = by_time.find(e.time);
    if (it == by_time.end()) {
      throw std::runtime_error("ate: no ground truth at timestamp " + std::to_string(e.time));
    }
    const double dx = e.x - it->second->pose.x;
    const double dy = e.y - it->second->pose.y;
    const double err = std::hypot(dx, dy);
    report.times.push_back(e.time);
    report.series.push_back(err);
    sum += err;
    report.total_runtime_s += e.runtime_s;
  }
  if (!report.series.empty()) {
    report.mean_ate = sum / static_cast<double>(report.series.size());
    report.median_ate = detail::median_of(report.series);
  }
  return report;
}

/// Converts pipeline output to the plain rows the evaluation consumes.
inline std::vector<EstimateRow> rows_from_results(const std::vector<EpochResult>& results) {
  std::vector<EstimateRow> rows;
  rows.reserve(results.size());
  for (const auto& r : results) {
    EstimateRow row;
    row.time = r.time;
    row.x = r.pose.x;
    row.y = r.pose.y;
    row.z = r.pose.z;
    row.phi = r.pose.phi;
    row.delta = r.clock.delta;
    row.delta_dot = r.clock.delta_dot;
    row.k = r.k();
    row.runtime_s = r.runtime_s;
    rows.push_back(row);
  }
  return rows;
}

/// One line of the model comparison: selector name, accuracy, runtime.
struct ModelRun {
  std::string model;
  double mean_ate_m = 0.0;
  double runtime_s = 0.0;
};

struct ComparisonTable {
  std::vector<ModelRun> rows;
  int best_index = -1;  ///< row with the lowest mean ATE
};

inline ComparisonTable compare(std::vector<ModelRun> rows) {
  ComparisonTable table;
  table.rows = std::move(rows);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (table.best_index < 0 ||
        table.rows[i].mean_ate_m < table.rows[static_cast<std::size_t>(table.best_index)].mean_ate_m) {
      table.best_index = static_cast<int>(i);
    }
  }
  return table;
}

/// Aligned text rendering; the best ATE row is flagged with '*'.
inline std::string format_table(const ComparisonTable& table) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "model" << std::right << std::setw(14) << "ATE [m]"
     << std::setw(14) << "Time [s]" << '\n';
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    os << std::left << std::setw(12) << r.model << std::right << std::setw(14) << std::fixed
       << std::setprecision(3) << r.mean_ate_m << std::setw(14) << r.runtime_s
       << (static_cast<int>(i) == table.best_index ? "  *" : "") << '\n';
  }
  return os.str();
}

inline void write_comparison_csv(std::ostream& os, const ComparisonTable& table) {
  os << "model,mean_ate_m,runtime_s,best\n";
  const auto fmt = detail::format_double;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    os << r.model << ',' << fmt(r.mean_ate_m) << ',' << fmt(r.runtime_s) << ','
       << (static_cast<int>(i) == table.best_index ? 1 : 0) << '\n';
  }
}

inline ComparisonTable read_comparison_csv(std::istream& is) {
  ComparisonTable table;
  std::string line;
  if (!std::getline(is, line) || line != "model,mean_ate_m,runtime_s,best") {
    throw std::runtime_error("read_comparison_csv: unexpected header");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ModelRun r;
    if (!std::getline(ls, r.model, ',')) break;
    int best = 0;
    char c;
    if (!(ls >> r.mean_ate_m >> c >> r.runtime_s >> c >> best)) {
      throw std::runtime_error("read_comparison_csv: malformed row: " + line);
    }
    if (best) table.best_index = static_cast<int>(table.rows.size());
    table.rows.push_back(std::move(r));
  }
  return table;
}

}  // namespace ivm

#endif  // IVM_EVALUATE_HPP
