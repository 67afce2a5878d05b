#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "mapmatch/errors.hpp"
#include "mapmatch/geometry.hpp"

namespace mapmatch {

using RoadId = std::int64_t;

enum class RoadClass { Ordinary, Expressway, Tunnel };

inline const char* to_string(RoadClass c) {
  switch (c) {
    case RoadClass::Ordinary: return "ordinary";
    case RoadClass::Expressway: return "expressway";
    case RoadClass::Tunnel: return "tunnel";
  }
  return "ordinary";
}

inline RoadClass road_class_from_string(const std::string& s) {
  if (s == "ordinary") return RoadClass::Ordinary;
  if (s == "expressway") return RoadClass::Expressway;
  if (s == "tunnel") return RoadClass::Tunnel;
  throw ParseError("unknown road class '" + s + "'");
}

/// One directed road: an ordered polyline in the direction of travel.
struct Road {
  RoadId id = 0;
  std::vector<PointXY> polyline;
  RoadClass cls = RoadClass::Ordinary;
  int level = 0;  // 0 = surface, 1 = elevated
  std::vector<RoadId> successors;
  double length = 0.0;

  Projection project(const PointXY& p) const { return project_to_polyline(polyline, p); }
};

/// Elevated roads count as expressways for scenario purposes even when the
/// map tags them as an ordinary class.
inline RoadClass effective_road_class(const Road& r) {
  if (r.level >= 1 && r.cls == RoadClass::Ordinary) return RoadClass::Expressway;
  return r.cls;
}

namespace detail {

struct Bbox {
  double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
  bool overlaps(const Bbox& o) const {
    return min_x <= o.max_x && o.min_x <= max_x && min_y <= o.max_y && o.min_y <= max_y;
  }
};

/// Static STR-packed R-tree over road polyline segments. Built once from the
/// full segment set; queries return the road ids of every segment whose
/// bounding box overlaps the query box (conservative superset).
class SegmentRTree {
 public:
  struct Entry {
    Bbox box;
    RoadId road;
  };

  void build(std::vector<Entry> entries) {
    levels_.clear();
    if (entries.empty()) return;
    // Leaf level: STR packing. Sort by center x, slice, sort slices by center y.
    const size_t n = entries.size();
    const size_t leaf_count = (n + kFanout - 1) / kFanout;
    const size_t slice_count = static_cast<size_t>(std::ceil(std::sqrt(double(leaf_count))));
    const size_t slice_size = ((leaf_count + slice_count - 1) / slice_count) * kFanout;
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      return a.box.min_x + a.box.max_x < b.box.min_x + b.box.max_x;
    });
    for (size_t s = 0; s * slice_size < n; ++s) {
      auto first = entries.begin() + static_cast<long>(s * slice_size);
      auto last = entries.begin() + static_cast<long>(std::min(n, (s + 1) * slice_size));
      std::sort(first, last, [](const Entry& a, const Entry& b) {
        return a.box.min_y + a.box.max_y < b.box.min_y + b.box.max_y;
      });
    }
    entries_ = std::move(entries);

    // Group the packed entry order into nodes, then stack levels to the root.
    std::vector<Node> level;
    for (size_t i = 0; i < n; i += kFanout) {
      Node node;
      node.first = i;
      node.count = std::min(kFanout, n - i);
      node.box = entries_[i].box;
      for (size_t k = 1; k < node.count; ++k) expand(node.box, entries_[i + k].box);
      level.push_back(node);
    }
    levels_.push_back(std::move(level));
    while (levels_.back().size() > 1) {
      const auto& below = levels_.back();
      std::vector<Node> up;
      for (size_t i = 0; i < below.size(); i += kFanout) {
        Node node;
        node.first = i;
        node.count = std::min(kFanout, below.size() - i);
        node.box = below[i].box;
        for (size_t k = 1; k < node.count; ++k) expand(node.box, below[i + k].box);
        up.push_back(node);
      }
      levels_.push_back(std::move(up));
    }
  }

  /// Collects road ids of all segments whose bbox overlaps `query`.
  void query(const Bbox& query, std::set<RoadId>& out) const {
    if (levels_.empty()) return;
    descend(query, levels_.size() - 1, 0, out);
  }

  size_t size() const { return entries_.size(); }

 private:
  static constexpr size_t kFanout = 8;

  struct Node {
    Bbox box;
    size_t first = 0;
    size_t count = 0;
  };

  static void expand(Bbox& b, const Bbox& o) {
    b.min_x = std::min(b.min_x, o.min_x);
    b.min_y = std::min(b.min_y, o.min_y);
    b.max_x = std::max(b.max_x, o.max_x);
    b.max_y = std::max(b.max_y, o.max_y);
  }

  void descend(const Bbox& query, size_t level, size_t index, std::set<RoadId>& out) const {
    const Node& node = levels_[level][index];
    if (!node.box.overlaps(query)) return;
    if (level == 0) {
      for (size_t k = 0; k < node.count; ++k) {
        const Entry& e = entries_[node.first + k];
        if (e.box.overlaps(query)) out.insert(e.road);
      }
      return;
    }
    for (size_t k = 0; k < node.count; ++k) descend(query, level - 1, node.first + k, out);
  }

  std::vector<Entry> entries_;
  std::vector<std::vector<Node>> levels_;  // levels_[0] = leaves, back() = root
};

}  // namespace detail

/// A candidate road for an observation, with its projection data.
struct Candidate {
  RoadId road = 0;
  Projection projection;
};

/// Immutable directed road network with a segment-level spatial index.
///
/// Safe to share across concurrent matcher sessions once constructed; all
/// queries are read-only.
class RoadGraph {
 public:
  RoadGraph() = default;

  /// Takes ownership of fully-specified roads (successors resolved) and
  /// builds the index. Validates road invariants.
  static RoadGraph from_roads(std::vector<Road> roads, double origin_lat = 0.0,
                              double origin_lon = 0.0) {
    RoadGraph g;
    g.origin_lat_ = origin_lat;
    g.origin_lon_ = origin_lon;
    for (auto& r : roads) {
      validate_road(r);
      r.length = polyline_length(r.polyline);
      const RoadId id = r.id;
      if (!g.roads_.emplace(id, std::move(r)).second) {
        throw ParseError("duplicate road id " + std::to_string(id));
      }
    }
    for (const auto& [id, r] : g.roads_) {
      for (RoadId s : r.successors) {
        if (!g.roads_.count(s)) {
          throw ParseError("road " + std::to_string(id) + " lists unknown successor " +
                           std::to_string(s));
        }
      }
    }
    g.build_index();
    return g;
  }

  /// Loads the documented GeoJSON subset: a FeatureCollection of LineString
  /// features with `road_id`, `class`, `level`, optional `successors` and
  /// `oneway` properties, coordinates in WGS84 lon/lat.
  ///
  /// Roads with `oneway: false` get a reverse twin with id (-id - 1); twin
  /// connectivity is derived by endpoint snapping. Roads without an explicit
  /// `successors` list have theirs derived the same way (0.5 m tolerance).
  static RoadGraph from_geojson(const nlohmann::json& doc, double snap_tolerance = 0.5) {
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection") {
      throw ParseError("map must be a GeoJSON FeatureCollection");
    }
    double origin_lat = 0.0, origin_lon = 0.0;
    bool have_origin = false;
    if (doc.contains("properties") && doc["properties"].contains("origin")) {
      const auto& o = doc["properties"]["origin"];
      if (!o.is_array() || o.size() != 2 || !o[0].is_number() || !o[1].is_number()) {
        throw ParseError("origin must be [lat, lon]");
      }
      origin_lat = o[0].get<double>();
      origin_lon = o[1].get<double>();
      have_origin = true;
    }
    const auto& features = doc.at("features");
    if (!features.is_array()) throw ParseError("features must be an array");

    struct Raw {
      Road road;
      bool oneway = true;
      bool explicit_successors = false;
    };
    std::vector<Raw> raws;
    try {
      for (const auto& f : features) {
        const auto& geom = f.at("geometry");
        if (geom.value("type", "") != "LineString") {
          throw ParseError("every feature must be a LineString");
        }
        const auto& props = f.at("properties");
        Raw raw;
        raw.road.id = props.at("road_id").get<RoadId>();
        if (raw.road.id < 0) throw ParseError("road_id must be non-negative");
        raw.road.cls = road_class_from_string(props.at("class").get<std::string>());
        raw.road.level = props.value("level", 0);
        raw.oneway = props.value("oneway", true);
        if (props.contains("successors")) {
          raw.explicit_successors = true;
          for (const auto& s : props["successors"]) raw.road.successors.push_back(s.get<RoadId>());
        }
        const auto& coords = geom.at("coordinates");
        if (!have_origin) {
          if (coords.empty()) throw ParseError("empty LineString");
          origin_lat = coords[0][1].get<double>();
          origin_lon = coords[0][0].get<double>();
          have_origin = true;
        }
        for (const auto& c : coords) {
          const double lon = c[0].get<double>();
          const double lat = c[1].get<double>();
          raw.road.polyline.push_back(project_wgs84(lat, lon, origin_lat, origin_lon));
        }
        raws.push_back(std::move(raw));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed map feature: ") + e.what());
    }

    // Reverse twins for two-way roads. Twin ids mirror user ids below zero.
    std::vector<Road> roads;
    std::set<RoadId> twoway_ids;
    for (const auto& raw : raws) {
      if (!raw.oneway) twoway_ids.insert(raw.road.id);
    }
    std::vector<char> explicit_flags;
    for (const auto& raw : raws) {
      roads.push_back(raw.road);
      explicit_flags.push_back(raw.explicit_successors ? 1 : 0);
      if (!raw.oneway) {
        Road twin = raw.road;
        twin.id = -raw.road.id - 1;
        std::reverse(twin.polyline.begin(), twin.polyline.end());
        twin.successors.clear();
        roads.push_back(std::move(twin));
        explicit_flags.push_back(0);  // twins always snap
      }
    }
    // Reversed explicit edges between two-way pairs: A->B yields twin(B)->twin(A).
    for (const auto& raw : raws) {
      if (raw.oneway || !raw.explicit_successors) continue;
      for (RoadId s : raw.road.successors) {
        if (!twoway_ids.count(s)) continue;
        for (auto& r : roads) {
          if (r.id == -s - 1) r.successors.push_back(-raw.road.id - 1);
        }
      }
    }
    derive_missing_successors(roads, explicit_flags, snap_tolerance);
    return from_roads(std::move(roads), origin_lat, origin_lon);
  }

  static RoadGraph load_geojson(const std::string& path, double snap_tolerance = 0.5) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open map file: " + path);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("invalid JSON in ") + path + ": " + e.what());
    }
    return from_geojson(doc, snap_tolerance);
  }

  /// Serializes back to the documented GeoJSON subset (WGS84, with the local
  /// origin recorded as a FeatureCollection property). Coordinates are rounded
  /// to 9 decimal places (~0.1 mm) so that write -> read -> write is
  /// byte-identical despite the projection round trip.
  nlohmann::json to_geojson() const {
    const auto round9 = [](double v) { return std::round(v * 1e9) / 1e9; };
    nlohmann::json features = nlohmann::json::array();
    for (const auto& [id, r] : roads_) {
      if (id < 0) continue;  // reverse twins are derived, not stored
      nlohmann::json coords = nlohmann::json::array();
      for (const auto& p : r.polyline) {
        auto [lat, lon] = unproject_wgs84(p, origin_lat_, origin_lon_);
        coords.push_back({round9(lon), round9(lat)});
      }
      nlohmann::json props{{"road_id", id},
                           {"class", to_string(r.cls)},
                           {"level", r.level},
                           {"successors", r.successors}};
      features.push_back({{"type", "Feature"},
                          {"geometry", {{"type", "LineString"}, {"coordinates", coords}}},
                          {"properties", props}});
    }
    return {{"type", "FeatureCollection"},
            {"properties", {{"origin", {origin_lat_, origin_lon_}}}},
            {"features", features}};
  }

  const Road& road(RoadId id) const {
    auto it = roads_.find(id);
    if (it == roads_.end()) throw UnknownRoad("unknown road id " + std::to_string(id));
    return it->second;
  }

  bool has_road(RoadId id) const { return roads_.count(id) > 0; }
  const std::map<RoadId, Road>& roads() const { return roads_; }
  double origin_lat() const { return origin_lat_; }
  double origin_lon() const { return origin_lon_; }

  PointXY project_to_local(double lat, double lon) const {
    return project_wgs84(lat, lon, origin_lat_, origin_lon_);
  }

  /// All roads whose projection distance is <= radius, ordered by road id.
  std::vector<Candidate> candidates(const PointXY& p, double radius) const {
    detail::Bbox q{p.x - radius, p.y - radius, p.x + radius, p.y + radius};
    std::set<RoadId> ids;
    index_.query(q, ids);
    std::vector<Candidate> out;
    for (RoadId id : ids) {
      Projection proj = roads_.at(id).project(p);
      if (proj.distance <= radius) out.push_back({id, proj});
    }
    return out;  // std::set iteration is already id-ordered
  }

  /// Minimum connected distance from `from` to `to`: the summed polyline
  /// length of strictly intermediate roads on the shortest directed path.
  /// Zero when `to` is `from` itself or a direct successor; std::nullopt when
  /// no path exists within `cap` meters.
  std::optional<double> min_connected_distance(RoadId from, RoadId to, double cap) const {
    const Road& src = road(from);
    road(to);  // validate
    if (from == to) return 0.0;
    for (RoadId s : src.successors) {
      if (s == to) return 0.0;
    }
    // Dijkstra where entering a road is free and passing through it costs
    // its length. `dist` is the intermediate length accumulated on arrival.
    using QItem = std::pair<double, RoadId>;
    std::priority_queue<QItem, std::vector<QItem>, std::greater<>> queue;
    std::map<RoadId, double> dist;
    dist[from] = 0.0;
    queue.emplace(0.0, from);
    while (!queue.empty()) {
      auto [d, r] = queue.top();
      queue.pop();
      if (d > dist[r]) continue;
      if (r == to) return d;
      const Road& cur = roads_.at(r);
      const double through = d + (r == from ? 0.0 : cur.length);
      if (through > cap) continue;
      for (RoadId s : cur.successors) {
        auto it = dist.find(s);
        if (it == dist.end() || through < it->second) {
          dist[s] = through;
          queue.emplace(through, s);
        }
      }
    }
    return std::nullopt;
  }

 private:
  static void validate_road(const Road& r) {
    if (r.polyline.size() < 2) {
      throw ParseError("road " + std::to_string(r.id) + " needs at least 2 points");
    }
    for (size_t i = 1; i < r.polyline.size(); ++i) {
      if (r.polyline[i] == r.polyline[i - 1]) {
        throw ParseError("road " + std::to_string(r.id) + " has repeated consecutive points");
      }
    }
    for (const auto& p : r.polyline) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || std::fabs(p.x) >= 1e7 ||
          std::fabs(p.y) >= 1e7) {
        throw ParseError("road " + std::to_string(r.id) + " has out-of-range coordinates");
      }
    }
  }

  static void derive_missing_successors(std::vector<Road>& roads,
                                        const std::vector<char>& explicit_flags,
                                        double snap_tolerance) {
    for (size_t i = 0; i < roads.size(); ++i) {
      if (explicit_flags[i]) continue;
      Road& r = roads[i];
      const PointXY end = r.polyline.back();
      for (const Road& other : roads) {
        if (other.id == r.id) continue;
        if (other.id == -r.id - 1 || r.id == -other.id - 1) continue;  // no U-turn onto the twin
        if (distance(end, other.polyline.front()) <= snap_tolerance) {
          r.successors.push_back(other.id);
        }
      }
      std::sort(r.successors.begin(), r.successors.end());
      r.successors.erase(std::unique(r.successors.begin(), r.successors.end()),
                         r.successors.end());
    }
  }

  void build_index() {
    std::vector<detail::SegmentRTree::Entry> entries;
    for (const auto& [id, r] : roads_) {
      for (size_t i = 0; i + 1 < r.polyline.size(); ++i) {
        const PointXY a = r.polyline[i];
        const PointXY b = r.polyline[i + 1];
        entries.push_back({{std::min(a.x, b.x), std::min(a.y, b.y), std::max(a.x, b.x),
                            std::max(a.y, b.y)},
                           id});
      }
    }
    index_.build(std::move(entries));
  }

  std::map<RoadId, Road> roads_;
  double origin_lat_ = 0.0;
  double origin_lon_ = 0.0;
  detail::SegmentRTree index_;
};

}  // namespace mapmatch
