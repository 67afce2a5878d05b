#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "mapmatch/errors.hpp"
#include "mapmatch/geometry.hpp"
#include "mapmatch/hmm.hpp"
#include "mapmatch/road_graph.hpp"

namespace mapmatch {

enum class MarkType { Solid, Dashed };

inline std::string to_string(MarkType t) { return t == MarkType::Solid ? "solid" : "dashed"; }

inline MarkType mark_type_from_string(const std::string& s) {
  if (s == "solid") return MarkType::Solid;
  if (s == "dashed") return MarkType::Dashed;
  throw ParseError("unknown lane marking type '" + s + "'");
}

enum class LaneSource { BSpline, Polyline };

/// One directed sample of a lane marking: position, forward bearing, type.
struct LaneSample {
  PointXY position;
  double heading = 0.0;  // degrees, [0, 360)
  MarkType type = MarkType::Solid;
};

struct LaneMarking {
  int64_t id = 0;
  std::vector<LaneSample> points;
  LaneSource source = LaneSource::Polyline;

  std::vector<PointXY> polyline() const {
    std::vector<PointXY> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.position);
    return out;
  }
};

inline constexpr double kMinSampleSpacing = 0.2;
inline constexpr double kMaxSampleSpacing = 5.0;

/// Enforces the sampling invariants: at least two points, consecutive
/// spacing within [0.2, 5] m.
inline void validate_lane_marking(const LaneMarking& lane) {
  if (lane.points.size() < 2) {
    throw InvalidSpline("lane " + std::to_string(lane.id) + " has fewer than 2 sample points");
  }
  for (size_t i = 1; i < lane.points.size(); ++i) {
    const double d = distance(lane.points[i - 1].position, lane.points[i].position);
    if (d < kMinSampleSpacing - 1e-9 || d > kMaxSampleSpacing + 1e-9) {
      throw InvalidSpline("lane " + std::to_string(lane.id) + " sample spacing " +
                          std::to_string(d) + " m outside [0.2, 5]");
    }
  }
}

namespace detail {

/// Clamped cubic B-spline over `ctrl`: basis evaluation via De Boor.
/// Parameter domain is [0, n-3] for n control points.
struct CubicBSpline {
  std::vector<PointXY> ctrl;
  std::vector<double> knots;  // n + 4 clamped knots

  explicit CubicBSpline(std::span<const PointXY> control) : ctrl(control.begin(), control.end()) {
    const size_t n = ctrl.size();
    knots.resize(n + 4);
    const double tmax = static_cast<double>(n - 3);
    for (size_t i = 0; i < knots.size(); ++i) {
      if (i < 4) {
        knots[i] = 0.0;
      } else if (i < n) {
        knots[i] = static_cast<double>(i - 3);
      } else {
        knots[i] = tmax;
      }
    }
  }

  double t_max() const { return static_cast<double>(ctrl.size() - 3); }

  size_t span_index(double t) const {
    // Largest k with knots[k] <= t < knots[k+1], clamped to the valid range.
    const size_t n = ctrl.size();
    if (t >= t_max()) return n - 1;
    size_t k = 3;
    while (k + 1 < n && knots[k + 1] <= t) ++k;
    return k;
  }

  PointXY position(double t) const {
    t = std::clamp(t, 0.0, t_max());
    const size_t k = span_index(t);
    PointXY d[4];
    for (int j = 0; j < 4; ++j) d[j] = ctrl[k - 3 + j];
    for (int r = 1; r <= 3; ++r) {
      for (int j = 3; j >= r; --j) {
        const size_t i = k - 3 + j;
        const double denom = knots[i + 4 - r] - knots[i];
        const double alpha = denom > 0.0 ? (t - knots[i]) / denom : 0.0;
        d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
      }
    }
    return d[3];
  }

  /// First derivative: De Boor on the degree-2 hodograph.
  PointXY derivative(double t) const {
    t = std::clamp(t, 0.0, t_max());
    const size_t n = ctrl.size();
    std::vector<PointXY> q(n - 1);
    for (size_t i = 0; i + 1 < n; ++i) {
      const double denom = knots[i + 4] - knots[i + 1];
      q[i] = denom > 0.0 ? (ctrl[i + 1] - ctrl[i]) * (3.0 / denom) : PointXY{0.0, 0.0};
    }
    // Hodograph knots are knots[1 .. n+2]; reuse span search on the original.
    const size_t k = span_index(t);
    PointXY d[3];
    for (int j = 0; j < 3; ++j) d[j] = q[k - 3 + j];
    for (int r = 1; r <= 2; ++r) {
      for (int j = 2; j >= r; --j) {
        const size_t i = k - 2 + j;  // hodograph control i maps to knots[i+1]
        const double denom = knots[i + 3 - r] - knots[i];
        const double alpha = denom > 0.0 ? (t - knots[i]) / denom : 0.0;
        d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
      }
    }
    return d[2];
  }
};

}  // namespace detail

/// Samples a clamped cubic B-spline at ≈`interval` arc-length spacing.
/// Headings are the curve-tangent bearings at the sample parameters; the
/// marking type is left for the caller to fill in.
inline std::vector<LaneSample> sample_bspline(std::span<const PointXY> control_points,
                                              double interval) {
  if (control_points.size() < 4) {
    throw InvalidSpline("B-spline needs at least 4 control points, got " +
                        std::to_string(control_points.size()));
  }
  if (interval < kMinSampleSpacing || interval > kMaxSampleSpacing) {
    throw InvalidSpline("sample interval " + std::to_string(interval) + " m outside [0.2, 5]");
  }
  const detail::CubicBSpline spline(control_points);

  // Dense parameter table for arc-length inversion.
  const size_t spans = control_points.size() - 3;
  const size_t dense_n = spans * 32 + 1;
  std::vector<double> ts(dense_n), arcs(dense_n);
  std::vector<PointXY> pts(dense_n);
  for (size_t i = 0; i < dense_n; ++i) {
    ts[i] = spline.t_max() * static_cast<double>(i) / static_cast<double>(dense_n - 1);
    pts[i] = spline.position(ts[i]);
    arcs[i] = i == 0 ? 0.0 : arcs[i - 1] + distance(pts[i - 1], pts[i]);
  }
  const double total = arcs.back();
  if (total < kMinSampleSpacing) {
    throw InvalidSpline("B-spline arc length " + std::to_string(total) + " m is below 0.2");
  }

  const size_t n_seg = std::max<size_t>(1, static_cast<size_t>(std::llround(total / interval)));
  const double step = total / static_cast<double>(n_seg);

  std::vector<LaneSample> out;
  out.reserve(n_seg + 1);
  size_t cursor = 0;
  for (size_t k = 0; k <= n_seg; ++k) {
    const double s = std::min(step * static_cast<double>(k), total);
    while (cursor + 1 < dense_n && arcs[cursor + 1] < s) ++cursor;
    double t;
    if (cursor + 1 >= dense_n) {
      t = ts.back();
    } else {
      const double seg = arcs[cursor + 1] - arcs[cursor];
      const double frac = seg > 0.0 ? (s - arcs[cursor]) / seg : 0.0;
      t = ts[cursor] + (ts[cursor + 1] - ts[cursor]) * frac;
    }
    LaneSample sample;
    sample.position = spline.position(t);
    const PointXY tangent = spline.derivative(t);
    if (tangent.norm() > 1e-12) {
      sample.heading = normalize_heading(std::atan2(tangent.x, tangent.y) * kRadToDeg);
    } else if (!out.empty()) {
      sample.heading = out.back().heading;
    }
    out.push_back(sample);
  }
  return out;
}

inline LaneMarking make_lane_from_bspline(int64_t id, std::span<const PointXY> control_points,
                                          double interval, MarkType type) {
  LaneMarking lane;
  lane.id = id;
  lane.source = LaneSource::BSpline;
  lane.points = sample_bspline(control_points, interval);
  for (auto& p : lane.points) p.type = type;
  validate_lane_marking(lane);
  return lane;
}

/// Per-sample-point matched probability of one road for one lane.
struct PerPointProb {
  int point_index = 0;   // k, index into LaneMarking::points
  double probability = 0.0;
};

struct LaneAssociation {
  int64_t lane_id = 0;
  RoadId road_id = 0;
  double probability = 0.0;  // max over per_point
  std::vector<PerPointProb> per_point;
};

/// Associates one lane with the road network by running the matcher over the
/// lane's sample points as if they were a trajectory. Per-point probabilities
/// are the normalized per-step joint probabilities; the lane-level
/// association probability is their maximum. Associations at or below
/// `association_floor` are dropped (pass 0 to keep the full distribution).
inline std::vector<LaneAssociation> associate_lane(const RoadGraph& graph,
                                                   const LaneMarking& lane,
                                                   const MatchParams& params,
                                                   double association_floor) {
  validate_lane_marking(lane);
  MatcherState state;
  for (const auto& sample : lane.points) {
    advance(state, graph, Pose{sample.position, sample.heading}, params);
  }
  std::map<RoadId, LaneAssociation> by_road;
  for (size_t k = 0; k < state.steps.size(); ++k) {
    for (const auto& node : state.steps[k].nodes) {
      auto& assoc = by_road[node.road];
      assoc.lane_id = lane.id;
      assoc.road_id = node.road;
      const double p = std::exp(node.log_joint);
      assoc.per_point.push_back(PerPointProb{static_cast<int>(k), p});
      assoc.probability = std::max(assoc.probability, p);
    }
  }
  std::vector<LaneAssociation> out;
  for (auto& [road, assoc] : by_road) {
    if (assoc.probability > association_floor) out.push_back(std::move(assoc));
  }
  return out;
}

/// One flattened lane sample, the unit of the ICP reference cloud.
struct CloudPoint {
  PointXY position;
  MarkType type = MarkType::Solid;
  int64_t lane_id = 0;
};

namespace detail {

/// Uniform hash grid over cloud points for radius queries. Cells are keyed by
/// packed integer coordinates; results come back sorted by point index so
/// queries are deterministic.
class PointGrid {
 public:
  static constexpr double kCellSize = 8.0;

  void build(const std::vector<CloudPoint>& points) {
    cells_.clear();
    size_ = points.size();
    for (size_t i = 0; i < points.size(); ++i) {
      cells_[key(points[i].position)].push_back(i);
    }
  }

  /// Indices of all points within `radius` of `center` (exact filter done by
  /// the caller; this returns the covering cell contents, sorted).
  std::vector<size_t> query(PointXY center, double radius) const {
    std::vector<size_t> out;
    const long ix0 = cell_coord(center.x - radius), ix1 = cell_coord(center.x + radius);
    const long iy0 = cell_coord(center.y - radius), iy1 = cell_coord(center.y + radius);
    for (long ix = ix0; ix <= ix1; ++ix) {
      for (long iy = iy0; iy <= iy1; ++iy) {
        auto it = cells_.find(pack(ix, iy));
        if (it == cells_.end()) continue;
        out.insert(out.end(), it->second.begin(), it->second.end());
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  size_t size() const { return size_; }

 private:
  static long cell_coord(double v) { return static_cast<long>(std::floor(v / kCellSize)); }
  static int64_t pack(long ix, long iy) {
    return (static_cast<int64_t>(ix) << 32) ^ (static_cast<int64_t>(iy) & 0xffffffffLL);
  }
  int64_t key(PointXY p) const { return pack(cell_coord(p.x), cell_coord(p.y)); }

  std::unordered_map<int64_t, std::vector<size_t>> cells_;
  size_t size_ = 0;
};

}  // namespace detail

/// The lane-level enriched SD map: road graph, lane markings, lane→road
/// association probabilities, and the flattened typed point cloud used for
/// registration.
struct EnrichedMap {
  RoadGraph graph;
  std::map<int64_t, LaneMarking> lanes;
  std::vector<LaneAssociation> associations;
  std::vector<CloudPoint> sampled_cloud;
  detail::PointGrid cloud_index;
  std::map<std::pair<int64_t, RoadId>, double> association_index;

  /// Rebuilds the derived structures (point cloud, spatial index, association
  /// lookup) after `lanes`/`associations` change.
  void rebuild_cloud() {
    sampled_cloud.clear();
    for (const auto& [id, lane] : lanes) {
      for (const auto& p : lane.points) {
        sampled_cloud.push_back(CloudPoint{p.position, p.type, id});
      }
    }
    cloud_index.build(sampled_cloud);
    association_index.clear();
    for (const auto& a : associations) {
      association_index[{a.lane_id, a.road_id}] = a.probability;
    }
  }

  /// Association probability P(M2(lane)=road); 0 when not associated.
  double association_probability(int64_t lane_id, RoadId road_id) const {
    auto it = association_index.find({lane_id, road_id});
    return it == association_index.end() ? 0.0 : it->second;
  }
};

inline EnrichedMap build_enriched_map(RoadGraph graph, std::vector<LaneMarking> lane_list,
                                      const MatchParams& params, double association_floor) {
  EnrichedMap em;
  em.graph = std::move(graph);
  for (auto& lane : lane_list) {
    validate_lane_marking(lane);
    const int64_t id = lane.id;
    if (!em.lanes.emplace(id, std::move(lane)).second) {
      throw DuplicateLane("duplicate lane id " + std::to_string(id));
    }
  }
  for (const auto& [id, lane] : em.lanes) {
    auto assoc = associate_lane(em.graph, lane, params, association_floor);
    em.associations.insert(em.associations.end(), assoc.begin(), assoc.end());
  }
  em.rebuild_cloud();
  return em;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace detail

/// Single-document JSON form, versioned "enriched-sd/1". Probabilities are
/// rounded to 6 decimals; geometry is stored exactly.
inline nlohmann::json enriched_to_json(const EnrichedMap& em) {
  nlohmann::json doc;
  doc["format"] = "enriched-sd/1";
  doc["map"] = em.graph.to_geojson();
  nlohmann::json lanes = nlohmann::json::array();
  for (const auto& [id, lane] : em.lanes) {
    nlohmann::json l;
    l["lane_id"] = id;
    l["source"] = lane.source == LaneSource::BSpline ? "bspline" : "polyline";
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : lane.points) {
      pts.push_back({p.position.x, p.position.y, p.heading, to_string(p.type)});
    }
    l["points"] = std::move(pts);
    lanes.push_back(std::move(l));
  }
  doc["lanes"] = std::move(lanes);
  nlohmann::json assocs = nlohmann::json::array();
  for (const auto& a : em.associations) {
    nlohmann::json j;
    j["lane_id"] = a.lane_id;
    j["road_id"] = a.road_id;
    j["probability"] = detail::round6(a.probability);
    nlohmann::json pp = nlohmann::json::array();
    for (const auto& p : a.per_point) {
      pp.push_back({p.point_index, detail::round6(p.probability)});
    }
    j["per_point"] = std::move(pp);
    assocs.push_back(std::move(j));
  }
  doc["associations"] = std::move(assocs);
  return doc;
}

inline EnrichedMap enriched_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "enriched-sd/1") {
    throw ParseError("not an enriched-sd/1 document");
  }
  EnrichedMap em;
  em.graph = RoadGraph::from_geojson(doc.at("map"));
  for (const auto& l : doc.at("lanes")) {
    LaneMarking lane;
    lane.id = l.at("lane_id").get<int64_t>();
    lane.source = l.value("source", "polyline") == "bspline" ? LaneSource::BSpline
                                                             : LaneSource::Polyline;
    for (const auto& p : l.at("points")) {
      LaneSample s;
      s.position = PointXY{p.at(0).get<double>(), p.at(1).get<double>()};
      s.heading = p.at(2).get<double>();
      s.type = mark_type_from_string(p.at(3).get<std::string>());
      lane.points.push_back(s);
    }
    validate_lane_marking(lane);
    const int64_t id = lane.id;
    if (!em.lanes.emplace(id, std::move(lane)).second) {
      throw DuplicateLane("duplicate lane id " + std::to_string(id));
    }
  }
  for (const auto& j : doc.at("associations")) {
    LaneAssociation a;
    a.lane_id = j.at("lane_id").get<int64_t>();
    a.road_id = j.at("road_id").get<RoadId>();
    a.probability = j.at("probability").get<double>();
    if (!em.lanes.count(a.lane_id)) {
      throw ParseError("association references unknown lane " + std::to_string(a.lane_id));
    }
    em.graph.road(a.road_id);  // throws UnknownRoad if absent
    for (const auto& p : j.at("per_point")) {
      a.per_point.push_back(PerPointProb{p.at(0).get<int>(), p.at(1).get<double>()});
    }
    em.associations.push_back(std::move(a));
  }
  em.rebuild_cloud();
  return em;
}

inline void save_enriched(const EnrichedMap& em, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out << enriched_to_json(em).dump(2) << "\n";
}

inline EnrichedMap load_enriched(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ParseError("invalid JSON in '" + path + "'");
  return enriched_from_json(doc);
}

// ---------------------------------------------------------------------------
// Lanes JSONL input
// ---------------------------------------------------------------------------

/// One lane per line, either explicit samples or B-spline control points:
///   {"lane_id": 1, "type_default": "solid",
///    "points": [[x, y, heading, "dashed"?], ...]}
///   {"lane_id": 2, "type_default": "dashed", "bspline": [[x, y], ...],
///    "interval": 1.0?}
inline std::vector<LaneMarking> load_lanes_jsonl(const std::string& path,
                                                 double default_interval = 1.0) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::vector<LaneMarking> lanes;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid JSON", line_no);
    try {
      const int64_t id = j.at("lane_id").get<int64_t>();
      const MarkType def = mark_type_from_string(j.value("type_default", "solid"));
      if (j.contains("bspline")) {
        std::vector<PointXY> ctrl;
        for (const auto& p : j.at("bspline")) {
          ctrl.push_back(PointXY{p.at(0).get<double>(), p.at(1).get<double>()});
        }
        const double interval = j.value("interval", default_interval);
        lanes.push_back(make_lane_from_bspline(id, ctrl, interval, def));
      } else {
        LaneMarking lane;
        lane.id = id;
        lane.source = LaneSource::Polyline;
        for (const auto& p : j.at("points")) {
          LaneSample s;
          s.position = PointXY{p.at(0).get<double>(), p.at(1).get<double>()};
          s.heading = normalize_heading(p.at(2).get<double>());
          s.type = p.size() > 3 ? mark_type_from_string(p.at(3).get<std::string>()) : def;
          lane.points.push_back(s);
        }
        validate_lane_marking(lane);
        lanes.push_back(std::move(lane));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad lane record: ") + e.what(), line_no);
    } catch (const Error& e) {
      throw ParseError(std::string("bad lane record: ") + e.what(), line_no);
    }
  }
  return lanes;
}

}  // namespace mapmatch
