#pragma once

// Shared test scaffolding: scratch directories, file helpers, small fixture
// graphs, and a subprocess runner for the command-line binary.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mapmatch/icp.hpp"
#include "mapmatch/road_graph.hpp"

namespace testutil {

/// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    const auto base = fs::temp_directory_path();
    for (int i = 0;; ++i) {
      fs::path candidate = base / (tag + "_" + std::to_string(::getpid()) + "_" +
                                   std::to_string(i));
      std::error_code ec;
      if (fs::create_directories(candidate, ec) && !ec) {
        path_ = candidate;
        return;
      }
      if (i > 1000) throw std::runtime_error("cannot create scratch directory");
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI binary with the given argument string; returns the exit code.
/// stdout/stderr are sent to `log_path` when given, otherwise discarded.
inline int run_cli(const std::string& args, const std::string& log_path = "") {
#ifndef MAPMATCH_CLI_PATH
#error "MAPMATCH_CLI_PATH must be defined"
#endif
  std::string cmd = std::string(MAPMATCH_CLI_PATH) + " " + args;
  cmd += log_path.empty() ? " >/dev/null 2>&1" : " >" + log_path + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  return WEXITSTATUS(rc);
}

/// Straight east-west road of the given length at y, id, with successors.
inline mapmatch::Road straight_road(mapmatch::RoadId id, double x0, double x1, double y,
                                    std::vector<mapmatch::RoadId> successors = {},
                                    mapmatch::RoadClass cls = mapmatch::RoadClass::Ordinary,
                                    int level = 0) {
  mapmatch::Road r;
  r.id = id;
  r.polyline = {{x0, y}, {x1, y}};
  r.cls = cls;
  r.level = level;
  r.successors = std::move(successors);
  return r;
}

/// Vehicle-frame coordinates (forward-x, left-y) of a map point seen from
/// `pose`; the inverse of mapmatch::vehicle_to_map.
inline mapmatch::PointXY map_to_vehicle(mapmatch::PointXY q, const mapmatch::Pose& pose) {
  const double th = pose.heading * mapmatch::kDegToRad;
  const mapmatch::PointXY fwd{std::sin(th), std::cos(th)};
  const mapmatch::PointXY left{-std::cos(th), std::sin(th)};
  const mapmatch::PointXY rel = q - pose.position;
  return mapmatch::PointXY{rel.dot(fwd), rel.dot(left)};
}

/// One lane boundary of the corner road: an east leg at y = offset, a
/// quarter-circle fillet around (-6, 6), then a north leg at x = -offset.
/// `offset` is the signed distance left of the centerline, so the left
/// boundary turns on a tighter radius than the right one.
struct CornerLaneCurve {
  double offset = 0.0;
  static constexpr double kFillet = 6.0;  // centerline fillet radius
  static constexpr double kLeg = 28.0;    // straight length of each leg

  double radius() const { return kFillet - offset; }
  double arc() const { return 0.5 * mapmatch::kPi * radius(); }
  double length() const { return 2.0 * kLeg + arc(); }

  /// Sample at arc length s along this boundary (clamped to the curve).
  mapmatch::LaneSample at(double s, mapmatch::MarkType type) const {
    s = std::clamp(s, 0.0, length());
    mapmatch::LaneSample out;
    out.type = type;
    if (s <= kLeg) {
      out.position = {-kFillet - kLeg + s, offset};
      out.heading = 90.0;
    } else if (s <= kLeg + arc()) {
      const double theta = -0.5 * mapmatch::kPi + (s - kLeg) / radius();
      out.position = mapmatch::PointXY{-kFillet, kFillet} +
                     mapmatch::PointXY{std::cos(theta), std::sin(theta)} * radius();
      out.heading = mapmatch::normalize_heading(-theta * mapmatch::kRadToDeg);
    } else {
      out.position = {-offset, kFillet + (s - kLeg - arc())};
      out.heading = 0.0;
    }
    return out;
  }
};

/// Two lane markings (solid left, dashed right, ±1.75 m) flanking the corner
/// road, sampled every `sample_step` meters of each boundary's own arc
/// length. The perpendicular legs pin both translation axes and give the
/// rotation long lever arms, so a rigid registration against this cloud has
/// a unique, well-conditioned optimum.
inline mapmatch::EnrichedMap corner_pair_map(double sample_step = 0.25) {
  mapmatch::EnrichedMap em;
  const mapmatch::MarkType types[2] = {mapmatch::MarkType::Solid, mapmatch::MarkType::Dashed};
  const double offsets[2] = {1.75, -1.75};
  for (int i = 0; i < 2; ++i) {
    const CornerLaneCurve curve{offsets[i]};
    mapmatch::LaneMarking lane;
    lane.id = i + 1;
    for (double s = 0.0; s <= curve.length() + 1e-9; s += sample_step) {
      lane.points.push_back(curve.at(s, types[i]));
    }
    em.lanes.emplace(lane.id, std::move(lane));
  }
  em.rebuild_cloud();
  return em;
}

/// Ground-truth pose used with corner_pair_map: mid-fillet on the
/// centerline, heading north-east along the curve.
inline mapmatch::Pose corner_truth_pose() {
  const double theta = -0.25 * mapmatch::kPi;
  return mapmatch::Pose{mapmatch::PointXY{-CornerLaneCurve::kFillet, CornerLaneCurve::kFillet} +
                            mapmatch::PointXY{std::cos(theta), std::sin(theta)} *
                                CornerLaneCurve::kFillet,
                        45.0};
}

/// Vehicle-frame detections of the corner road's boundaries within `radius`
/// of the truth pose. Sampled every `step` meters of boundary arc length —
/// deliberately incommensurate with the map cloud's spacing, the way real
/// detections never coincide with map sample nodes, so nearest-point pairing
/// keeps a restoring pull at sub-spacing offsets instead of locking onto a
/// shifted copy of the sample lattice.
inline std::vector<mapmatch::TypedPoint> corner_detections(const mapmatch::Pose& truth,
                                                           double radius = 25.0,
                                                           double step = 0.53) {
  std::vector<mapmatch::TypedPoint> out;
  const mapmatch::MarkType types[2] = {mapmatch::MarkType::Solid, mapmatch::MarkType::Dashed};
  const double offsets[2] = {1.75, -1.75};
  for (int i = 0; i < 2; ++i) {
    const CornerLaneCurve curve{offsets[i]};
    for (double s = 0.0; s <= curve.length() + 1e-9; s += step) {
      const mapmatch::LaneSample ls = curve.at(s, types[i]);
      if (mapmatch::distance(ls.position, truth.position) <= radius) {
        out.push_back(mapmatch::TypedPoint{map_to_vehicle(ls.position, truth), types[i]});
      }
    }
  }
  return out;
}

}  // namespace testutil
