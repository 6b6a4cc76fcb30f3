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
 * @file stream_io.hpp
 * @brief Plain-text measurement stream format shared by the simulator, the
 *        pipeline and the evaluation tools.
 *
 * One record per line, whitespace separated:
 *
 *   pseudorange3 <time> <sat_id> <sat_x> <sat_y> <sat_z> <range> <std>
 *   odometry <time> <dt> <fwd> <lat> <vert> <dyaw> <i11> <i22> <i33> <i44>
 *   gt <time> <x> <y> <z> <phi>
 *
 * Values are printed with 17 significant digits, so writing, reading and
 * writing again produces byte-identical files.
 */

#ifndef IVM_STREAM_IO_HPP
#define IVM_STREAM_IO_HPP

#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivm/gmm.hpp"
#include "ivm/types.hpp"

namespace ivm {

/// Ground-truth pose record as stored in stream files.
struct GtRecord {
  Timestamp time = 0.0;
  PoseState pose;
};

/// In-memory content of a measurement stream file. Vectors preserve record
/// order; writing interleaves them canonically by time.
struct StreamData {
  std::vector<PseudorangeMeasurement> pseudoranges;
  std::vector<OdometryMeasurement> odometry;
  std::vector<GtRecord> ground_truth;

  bool empty() const {
    return pseudoranges.empty() && odometry.empty() && ground_truth.empty();
  }

  /// Keeps only records with time <= t (used for causality checks).
  StreamData truncated(Timestamp t) const {
    StreamData out;
    for (const auto& m : pseudoranges)
      if (m.time <= t) out.pseudoranges.push_back(m);
    for (const auto& m : odometry)
      if (m.time <= t) out.odometry.push_back(m);
    for (const auto& m : ground_truth)
      if (m.time <= t) out.ground_truth.push_back(m);
    return out;
  }
};

inline void write_stream(std::ostream& os, const StreamData& data) {
  // Canonical order: time ascending; at equal times gt, then pseudorange,
  // then odometry; within a type, original vector order.
  std::size_t ig = 0, ip = 0, io = 0;
  const auto fmt = detail::format_double;
  while (ig < data.ground_truth.size() || ip < data.pseudoranges.size() ||
         io < data.odometry.size()) {
    const double tg = ig < data.ground_truth.size()
                          ? data.ground_truth[ig].time
                          : std::numeric_limits<double>::infinity();
    const double tp = ip < data.pseudoranges.size()
                          ? data.pseudoranges[ip].time
                          : std::numeric_limits<double>::infinity();
    const double to = io < data.odometry.size() ? data.odometry[io].time
                                                : std::numeric_limits<double>::infinity();
    if (tg <= tp && tg <= to) {
      const auto& g = data.ground_truth[ig++];
      os << "gt " << fmt(g.time) << ' ' << fmt(g.pose.x) << ' ' << fmt(g.pose.y) << ' '
         << fmt(g.pose.z) << ' ' << fmt(g.pose.phi) << '\n';
    } else if (tp <= to) {
      const auto& m = data.pseudoranges[ip++];
      os << "pseudorange3 " << fmt(m.time) << ' ' << m.sat_id << ' ' << fmt(m.sat_pos.x())
         << ' ' << fmt(m.sat_pos.y()) << ' ' << fmt(m.sat_pos.z()) << ' ' << fmt(m.range)
         << ' ' << fmt(m.nominal_std) << '\n';
    } else {
      const auto& m = data.odometry[io++];
      os << "odometry " << fmt(m.time) << ' ' << fmt(m.dt) << ' ' << fmt(m.forward) << ' '
         << fmt(m.lateral) << ' ' << fmt(m.vertical) << ' ' << fmt(m.dyaw) << ' '
         << fmt(m.info(0, 0)) << ' ' << fmt(m.info(1, 1)) << ' ' << fmt(m.info(2, 2)) << ' '
         << fmt(m.info(3, 3)) << '\n';
    }
  }
}

inline StreamData read_stream(std::istream& is) {
  StreamData data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    bool ok = true;
    if (tag == "pseudorange3") {
      PseudorangeMeasurement m;
      ok = static_cast<bool>(ls >> m.time >> m.sat_id >> m.sat_pos.x() >> m.sat_pos.y() >>
                             m.sat_pos.z() >> m.range >> m.nominal_std);
      if (ok) data.pseudoranges.push_back(m);
    } else if (tag == "odometry") {
      OdometryMeasurement m;
      double i11, i22, i33, i44;
      ok = static_cast<bool>(ls >> m.time >> m.dt >> m.forward >> m.lateral >> m.vertical >>
                             m.dyaw >> i11 >> i22 >> i33 >> i44);
      if (ok) {
        m.info = Eigen::Vector4d(i11, i22, i33, i44).asDiagonal();
        data.odometry.push_back(m);
      }
    } else if (tag == "gt") {
      GtRecord g;
      ok = static_cast<bool>(ls >> g.time >> g.pose.x >> g.pose.y >> g.pose.z >> g.pose.phi);
      if (ok) data.ground_truth.push_back(g);
    } else {
      ok = false;
    }
    if (!ok) {
      throw std::runtime_error("read_stream: malformed record at line " +
                               std::to_string(line_no) + ": " + line);
    }
  }
  return data;
}

inline void save_stream_file(const std::string& path, const StreamData& data) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_stream(os, data);
}

inline StreamData load_stream_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return read_stream(is);
}

}  // namespace ivm

#endif  // IVM_STREAM_IO_HPP
