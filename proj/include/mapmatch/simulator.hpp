#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "mapmatch/errors.hpp"
#include "mapmatch/geometry.hpp"
#include "mapmatch/lane_markings.hpp"
#include "mapmatch/pipeline.hpp"
#include "mapmatch/road_graph.hpp"
#include "mapmatch/scenario.hpp"

namespace mapmatch {

enum class RouteKind { Straight, Ramp, Elevated, Tour };

inline RouteKind route_kind_from_string(const std::string& s) {
  if (s == "straight") return RouteKind::Straight;
  if (s == "ramp") return RouteKind::Ramp;
  if (s == "elevated") return RouteKind::Elevated;
  if (s == "tour") return RouteKind::Tour;
  throw InvalidRoute("unknown route kind '" + s + "'");
}

/// Knobs of the synthetic multilevel benchmark.
struct SimConfig {
  uint64_t seed = 1;
  // network
  int n_blocks = 10;            // grid blocks per side
  double elevated_span = 600.0; // meters of expressway above the central avenue
  double ramp_spacing = 600.0;  // meters between ramp stations along the span
  int lane_count = 2;
  double lane_width = 3.5;      // meters
  // route driven by the simulated vehicle
  std::string route = "tour";
  // noise
  double gnss_sigma = 10.0;     // meters, white positioning noise
  double bias_walk = 1.0;       // m/sqrt(s), slow positioning drift
  // sensing
  double scenario_accuracy = 0.9;
  double detection_dropout = 0.1;
  double detection_point_noise = 0.2;  // meters

  void validate() const {
    if (n_blocks < 1) throw InvalidConfig("n_blocks must be >= 1");
    for (auto [v, name] : {std::pair{elevated_span, "elevated_span"},
                           {ramp_spacing, "ramp_spacing"},
                           {lane_width, "lane_width"}}) {
      if (!(v > 0.0)) throw InvalidConfig(std::string(name) + " must be positive");
    }
    if (lane_count < 1) throw InvalidConfig("lane_count must be >= 1");
    for (auto [v, name] : {std::pair{scenario_accuracy, "scenario_accuracy"},
                           {detection_dropout, "detection_dropout"}}) {
      if (v < 0.0 || v > 1.0) throw InvalidConfig(std::string(name) + " must be in [0, 1]");
    }
    if (gnss_sigma < 0.0 || bias_walk < 0.0 || detection_point_noise < 0.0) {
      throw InvalidConfig("noise magnitudes must be non-negative");
    }
    try {
      route_kind_from_string(route);
    } catch (const InvalidRoute& e) {
      throw InvalidConfig(e.what());
    }
  }
};

// Fixed benchmark geometry and sensing constants.
inline constexpr double kBlockLength = 150.0;       // meters per grid block
inline constexpr double kSpeedMps = 15.0;           // driving speed, 1 Hz stepping
inline constexpr double kHeadingNoiseDeg = 3.0;
inline constexpr double kServiceRowOffset = 9.0;    // unmarked frontage rows beside the avenue
inline constexpr double kRampLength = 300.0;        // full ramp footprint (incl. taper)
inline constexpr double kGoreLength = 30.0;         // taper stub ahead of an on-ramp
inline constexpr double kRampBulge = 3.0;           // lateral offset of the ramp's parallel run
inline constexpr double kRampTaperLength = 60.0;    // diverge/merge length out to kRampBulge
inline constexpr double kRampLaneHalfWidth = 1.0;   // narrow single-lane ramp markings
inline constexpr double kDetectForward = 20.0;      // vehicle-frame sensing window
inline constexpr double kDetectLateral = 8.0;
inline constexpr double kScenarioPeak = 0.8;        // mass on the reported class
inline constexpr double kLaneSampleStep = 1.0;      // meters between lane samples

/// Deterministic, implementation-independent random source: mt19937_64 with
/// explicit uniform/normal conversion (std::normal_distribution is not
/// reproducible across standard libraries).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform() {  // [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double normal() {  // Box-Muller, one cached value
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = std::max(uniform(), 1e-300);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * kPi * u2;
    cached_ = r * std::sin(th);
    have_cached_ = true;
    return r * std::cos(th);
  }

  int uniform_int(int n) {  // [0, n)
    return std::min(n - 1, static_cast<int>(uniform() * n));
  }

 private:
  std::mt19937_64 gen_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

/// Applies a flat JSON object onto `config`. Unknown keys throw InvalidConfig.
inline void apply_sim_config_json(SimConfig& config, const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidConfig("sim config document must be a flat object");
  for (const auto& [key, value] : doc.items()) {
    auto number = [&]() -> double {
      if (!value.is_number()) throw InvalidConfig("sim key '" + key + "' expects a number");
      return value.get<double>();
    };
    if (key == "seed") {
      if (!value.is_number_integer() || value.get<int64_t>() < 0) {
        throw InvalidConfig("sim key 'seed' expects a non-negative integer");
      }
      config.seed = value.get<uint64_t>();
    } else if (key == "n_blocks") {
      if (!value.is_number_integer()) throw InvalidConfig("sim key 'n_blocks' expects an integer");
      config.n_blocks = value.get<int>();
    } else if (key == "lane_count") {
      if (!value.is_number_integer()) {
        throw InvalidConfig("sim key 'lane_count' expects an integer");
      }
      config.lane_count = value.get<int>();
    } else if (key == "route") {
      if (!value.is_string()) throw InvalidConfig("sim key 'route' expects a string");
      config.route = value.get<std::string>();
    } else if (key == "elevated_span") {
      config.elevated_span = number();
    } else if (key == "ramp_spacing") {
      config.ramp_spacing = number();
    } else if (key == "lane_width") {
      config.lane_width = number();
    } else if (key == "gnss_sigma") {
      config.gnss_sigma = number();
    } else if (key == "bias_walk") {
      config.bias_walk = number();
    } else if (key == "scenario_accuracy") {
      config.scenario_accuracy = number();
    } else if (key == "detection_dropout") {
      config.detection_dropout = number();
    } else if (key == "detection_point_noise") {
      config.detection_point_noise = number();
    } else {
      throw InvalidConfig("unknown sim config key '" + key + "'");
    }
  }
  config.validate();
}

/// Applies one `key=value` override; values parse as JSON scalars, with bare
/// words (e.g. `route=tour`) accepted as strings.
inline void apply_sim_set(SimConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw InvalidConfig("override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // bare words are strings
  apply_sim_config_json(config, nlohmann::json{{key, value}});
}

/// Serializes the full sim config as a flat JSON object, keys sorted.
inline nlohmann::json sim_config_to_json(const SimConfig& config) {
  nlohmann::json doc = nlohmann::json::object();
  doc["seed"] = config.seed;
  doc["n_blocks"] = config.n_blocks;
  doc["elevated_span"] = config.elevated_span;
  doc["ramp_spacing"] = config.ramp_spacing;
  doc["lane_count"] = config.lane_count;
  doc["lane_width"] = config.lane_width;
  doc["route"] = config.route;
  doc["gnss_sigma"] = config.gnss_sigma;
  doc["bias_walk"] = config.bias_walk;
  doc["scenario_accuracy"] = config.scenario_accuracy;
  doc["detection_dropout"] = config.detection_dropout;
  doc["detection_point_noise"] = config.detection_point_noise;
  return doc;
}

/// The generated network plus the id bookkeeping that route construction
/// needs. Ramp maps are keyed by the x coordinate (meters) of the elevated
/// node the ramp attaches to.
struct NetworkBundle {
  RoadGraph graph;
  std::vector<LaneMarking> lanes;

  // Eastbound chains, west to east.
  std::vector<RoadId> bottom_row;   // the y = 0 row (split-free reference route)
  std::vector<RoadId> avenue;       // the central avenue under the expressway
  std::vector<RoadId> elevated;     // expressway segments across the span
  std::map<int, RoadId> gores;      // taper stub feeding each on-ramp
  std::map<int, RoadId> on_ramps;
  std::map<int, RoadId> off_ramps;

  double y_mid = 0.0;
  double x_span_start = 0.0;
  double x_span_end = 0.0;
};

namespace detail {

// Surface and elevated endpoints are distinct junctions even where their
// planar coordinates coincide, so node identity carries the vertical level.
using NodeKey = std::tuple<long, long, int>;

inline NodeKey node_key(PointXY p, int level) {
  return {std::lround(p.x * 1000.0), std::lround(p.y * 1000.0), level};
}

/// Lane marking parallel to `polyline` at the given lateral offset (left of
/// travel positive), sampled every kLaneSampleStep meters; `type_at` maps the
/// arc position to a marking type.
template <typename TypeAt>
LaneMarking offset_lane(int64_t id, const std::vector<PointXY>& polyline, double offset,
                        TypeAt&& type_at) {
  const double length = polyline_length(polyline);
  const auto n_seg = std::max<long long>(1, std::llround(length / kLaneSampleStep));
  LaneMarking lane;
  lane.id = id;
  lane.source = LaneSource::Polyline;
  for (long long k = 0; k <= n_seg; ++k) {
    const double s = length * static_cast<double>(k) / static_cast<double>(n_seg);
    const auto [pos, heading] = point_at_arc(polyline, s);
    const double th = heading * kDegToRad;
    const PointXY left{-std::cos(th), std::sin(th)};
    LaneSample sample;
    sample.position = pos + left * offset;
    sample.heading = heading;
    sample.type = type_at(s);
    lane.points.push_back(sample);
  }
  return lane;
}

}  // namespace detail

/// Builds the multilevel benchmark network:
///  - a street grid of two-way ordinary roads, plus two unmarked service rows
///    flanking the central avenue at +-kServiceRowOffset;
///  - an elevated expressway (level 1) directly above the central avenue, so
///    planar geometry alone cannot separate the two levels;
///  - ramps spaced every ramp_spacing along the span, alternating on/off. An
///    on-ramp is a short taper stub (gore) followed by a climb that bows out
///    to kRampBulge before rejoining the expressway at a small included
///    angle; an off-ramp mirrors the climb back down to the avenue.
/// Lane markings cover the driveable corridor: edge lines per avenue block,
/// edges plus a dashed separator on the elevated deck, and a narrow
/// dashed-to-solid pair along each ramp. Service rows, cross streets, and
/// outer rows carry no markings. The network is a pure function of the
/// config; the seed only drives simulate_drive.
inline NetworkBundle generate_network(const SimConfig& config) {
  config.validate();
  NetworkBundle bundle;

  const double grid_w = config.n_blocks * kBlockLength;
  const int mid_j = config.n_blocks / 2;
  const double y_mid = mid_j * kBlockLength;
  bundle.y_mid = y_mid;

  // Row set: grid rows plus the service rows around the corridor.
  std::vector<double> ys;
  for (int j = 0; j <= config.n_blocks; ++j) ys.push_back(j * kBlockLength);
  for (double y : {y_mid - kServiceRowOffset, y_mid + kServiceRowOffset}) {
    if (y > 0.0 && y < grid_w) ys.push_back(y);
  }
  std::sort(ys.begin(), ys.end());
  std::vector<double> xs;
  for (int i = 0; i <= config.n_blocks; ++i) xs.push_back(i * kBlockLength);

  struct PendingRoad {
    Road road;
    int lvl_start = 0, lvl_end = 0;
    std::optional<size_t> reverse;  // index of the U-turn twin, if two-way
  };
  std::vector<PendingRoad> pend;
  std::map<detail::NodeKey, std::vector<size_t>> outgoing;

  auto add_road = [&](std::vector<PointXY> polyline, RoadClass cls, int level, int lvl_start,
                      int lvl_end) {
    PendingRoad p;
    p.road.id = static_cast<RoadId>(pend.size()) + 1;
    p.road.polyline = std::move(polyline);
    p.road.cls = cls;
    p.road.level = level;
    p.lvl_start = lvl_start;
    p.lvl_end = lvl_end;
    const size_t idx = pend.size();
    outgoing[detail::node_key(p.road.polyline.front(), lvl_start)].push_back(idx);
    pend.push_back(std::move(p));
    return idx;
  };
  auto add_two_way = [&](PointXY a, PointXY b, RoadClass cls, int level) {
    const size_t fwd = add_road({a, b}, cls, level, level, level);
    const size_t back = add_road({b, a}, cls, level, level, level);
    pend[fwd].reverse = back;
    pend[back].reverse = fwd;
    return fwd;
  };

  // Surface grid: horizontal rows, then vertical columns broken at every row.
  std::map<std::pair<int, int>, size_t> row_east;  // (row index, block) -> pend idx
  for (size_t jr = 0; jr < ys.size(); ++jr) {
    for (int i = 0; i + 1 <= config.n_blocks; ++i) {
      row_east[{static_cast<int>(jr), i}] =
          add_two_way(PointXY{xs[i], ys[jr]}, PointXY{xs[i + 1], ys[jr]}, RoadClass::Ordinary, 0);
    }
  }
  for (double x : xs) {
    for (size_t k = 0; k + 1 < ys.size(); ++k) {
      add_two_way(PointXY{x, ys[k]}, PointXY{x, ys[k + 1]}, RoadClass::Ordinary, 0);
    }
  }

  // Elevated span, snapped to whole blocks and centered.
  const int span_blocks = std::clamp<int>(
      static_cast<int>(std::llround(config.elevated_span / kBlockLength)), 1, config.n_blocks);
  const int start_block =
      std::clamp((config.n_blocks - span_blocks) / 2, 0, config.n_blocks - span_blocks);
  const double x_e0 = start_block * kBlockLength;
  const double x_e1 = x_e0 + span_blocks * kBlockLength;
  bundle.x_span_start = x_e0;
  bundle.x_span_end = x_e1;

  // Ramp stations: attach points along the span every ramp_spacing, snapped
  // to block multiples, alternating on/off; a station is kept only when the
  // ramp's full footprint fits on the grid.
  std::vector<std::pair<int, bool>> stations;  // (attach x, is_on_ramp)
  for (int k = 0;; ++k) {
    const double raw = x_e0 + k * config.ramp_spacing;
    if (raw > x_e1 + 1e-9) break;
    const int attach = static_cast<int>(std::llround(raw / kBlockLength)) *
                       static_cast<int>(kBlockLength);
    if (attach < x_e0 - 1e-9 || attach > x_e1 + 1e-9) continue;
    const bool is_on = (k % 2 == 0);
    if (is_on && attach - kRampLength < -1e-9) continue;
    if (!is_on && attach + kRampLength > grid_w + 1e-9) continue;
    if (!stations.empty() && stations.back().first == attach) continue;
    stations.emplace_back(attach, is_on);
  }

  // Elevated segments split only where a ramp attaches.
  std::vector<double> elev_nodes{x_e0, x_e1};
  for (const auto& [attach, is_on] : stations) {
    if (attach > x_e0 && attach < x_e1) elev_nodes.push_back(attach);
  }
  std::sort(elev_nodes.begin(), elev_nodes.end());
  elev_nodes.erase(std::unique(elev_nodes.begin(), elev_nodes.end()), elev_nodes.end());
  std::vector<size_t> elevated_east;
  for (size_t k = 0; k + 1 < elev_nodes.size(); ++k) {
    elevated_east.push_back(add_two_way(PointXY{elev_nodes[k], y_mid},
                                        PointXY{elev_nodes[k + 1], y_mid},
                                        RoadClass::Expressway, 1));
  }

  // Ramps. An on-ramp occupies [attach - 300, attach]: a 30 m gore stub along
  // the avenue, then a 270 m climb bowing out to +kRampBulge. An off-ramp
  // occupies [attach, attach + 300], mirroring the bow back down.
  std::map<int, size_t> gore_idx, on_idx, off_idx;
  for (const auto& [attach, is_on] : stations) {
    const double a = attach;
    if (is_on) {
      const double g0 = a - kRampLength;
      const double m0 = g0 + kGoreLength;
      gore_idx[attach] =
          add_road({PointXY{g0, y_mid}, PointXY{m0, y_mid}}, RoadClass::Expressway, 0, 0, 0);
      on_idx[attach] = add_road({PointXY{m0, y_mid},
                                 PointXY{m0 + kRampTaperLength, y_mid + kRampBulge},
                                 PointXY{a - kRampTaperLength, y_mid + kRampBulge},
                                 PointXY{a, y_mid}},
                                RoadClass::Expressway, 0, 0, 1);
    } else {
      off_idx[attach] = add_road({PointXY{a, y_mid},
                                  PointXY{a + kRampTaperLength, y_mid + kRampBulge},
                                  PointXY{a + kRampLength - kRampTaperLength, y_mid + kRampBulge},
                                  PointXY{a + kRampLength, y_mid}},
                                 RoadClass::Expressway, 0, 1, 0);
    }
  }

  // Successors: every road departing from a road's end node, minus the U-turn.
  for (size_t idx = 0; idx < pend.size(); ++idx) {
    auto& p = pend[idx];
    auto it = outgoing.find(detail::node_key(p.road.polyline.back(), p.lvl_end));
    if (it == outgoing.end()) continue;
    for (size_t succ : it->second) {
      if (succ == idx) continue;
      if (p.reverse && *p.reverse == succ) continue;
      p.road.successors.push_back(pend[succ].road.id);
    }
    std::sort(p.road.successors.begin(), p.road.successors.end());
  }

  // Route bookkeeping (ids, west to east).
  const int mid_row = static_cast<int>(std::find(ys.begin(), ys.end(), y_mid) - ys.begin());
  const int bottom_row = static_cast<int>(std::find(ys.begin(), ys.end(), 0.0) - ys.begin());
  for (int i = 0; i < config.n_blocks; ++i) {
    bundle.bottom_row.push_back(pend[row_east[{bottom_row, i}]].road.id);
    bundle.avenue.push_back(pend[row_east[{mid_row, i}]].road.id);
  }
  for (size_t idx : elevated_east) bundle.elevated.push_back(pend[idx].road.id);
  for (const auto& [attach, idx] : gore_idx) bundle.gores[attach] = pend[idx].road.id;
  for (const auto& [attach, idx] : on_idx) bundle.on_ramps[attach] = pend[idx].road.id;
  for (const auto& [attach, idx] : off_idx) bundle.off_ramps[attach] = pend[idx].road.id;

  // Lane markings along the driveable corridor (eastbound sampling only).
  int64_t lane_id = 1;
  const double w = config.lane_width;
  const int c = config.lane_count;
  auto solid = [](double) { return MarkType::Solid; };
  auto dashed = [](double) { return MarkType::Dashed; };
  auto dashed_then_solid = [](double s) {
    return s < kRampTaperLength ? MarkType::Dashed : MarkType::Solid;
  };
  for (int i = 0; i < config.n_blocks; ++i) {
    const auto& poly = pend[row_east[{mid_row, i}]].road.polyline;
    for (int k = 0; k < c; ++k) {
      const double off = w * (k - (c - 1) / 2.0);
      if (k == 0 || k == c - 1) {
        bundle.lanes.push_back(detail::offset_lane(lane_id++, poly, off, solid));
      } else {
        bundle.lanes.push_back(detail::offset_lane(lane_id++, poly, off, dashed));
      }
    }
  }
  for (size_t idx : elevated_east) {
    const auto& poly = pend[idx].road.polyline;
    for (int k = 0; k <= c; ++k) {
      const double off = w * (k - c / 2.0);
      if (k == 0 || k == c) {
        bundle.lanes.push_back(detail::offset_lane(lane_id++, poly, off, solid));
      } else {
        bundle.lanes.push_back(detail::offset_lane(lane_id++, poly, off, dashed));
      }
    }
  }
  auto ramp_lanes = [&](size_t idx) {
    const auto& poly = pend[idx].road.polyline;
    for (double off : {-kRampLaneHalfWidth, kRampLaneHalfWidth}) {
      bundle.lanes.push_back(detail::offset_lane(lane_id++, poly, off, dashed_then_solid));
    }
  };
  for (const auto& [attach, idx] : on_idx) ramp_lanes(idx);
  for (const auto& [attach, idx] : off_idx) ramp_lanes(idx);

  std::vector<Road> roads;
  roads.reserve(pend.size());
  for (auto& p : pend) roads.push_back(std::move(p.road));
  bundle.graph = RoadGraph::from_roads(std::move(roads));
  return bundle;
}

/// Assembles a connected road chain for the requested scenario; throws
/// InvalidRoute when the network lacks the pieces (e.g. no on-ramp).
inline std::vector<RoadId> build_route(const NetworkBundle& bundle, RouteKind kind) {
  std::vector<RoadId> route;
  const auto block_of = [](double x) { return static_cast<int>(std::llround(x / kBlockLength)); };
  if (kind == RouteKind::Straight) {
    route = bundle.bottom_row;
  } else {
    if (bundle.on_ramps.empty()) throw InvalidRoute("network has no on-ramp");
    const int on_attach = bundle.on_ramps.begin()->first;
    const int gore_block = block_of(on_attach - kRampLength);
    for (int i = 0; i < gore_block; ++i) route.push_back(bundle.avenue[i]);
    route.push_back(bundle.gores.at(on_attach));
    route.push_back(bundle.on_ramps.at(on_attach));
    if (kind != RouteKind::Ramp) {
      int last_attach = on_attach;
      std::optional<int> off_attach;
      if (kind == RouteKind::Tour) {
        for (const auto& [attach, id] : bundle.off_ramps) {
          if (attach > on_attach) {
            off_attach = attach;
            break;
          }
        }
        if (!off_attach) throw InvalidRoute("network has no off-ramp after the on-ramp");
      }
      for (RoadId id : bundle.elevated) {
        const auto& poly = bundle.graph.road(id).polyline;
        if (poly.front().x < on_attach - 1e-9) continue;
        if (off_attach && poly.back().x > *off_attach + 1e-9) break;
        route.push_back(id);
        last_attach = static_cast<int>(std::llround(poly.back().x));
      }
      if (kind == RouteKind::Tour) {
        if (last_attach != *off_attach) {
          throw InvalidRoute("elevated span does not reach the off-ramp");
        }
        route.push_back(bundle.off_ramps.at(*off_attach));
        for (int i = block_of(*off_attach + kRampLength);
             i < static_cast<int>(bundle.avenue.size()); ++i) {
          route.push_back(bundle.avenue[i]);
        }
      }
    }
  }
  if (route.empty()) throw InvalidRoute("route construction produced no roads");
  for (size_t i = 1; i < route.size(); ++i) {
    const auto& succ = bundle.graph.road(route[i - 1]).successors;
    if (std::find(succ.begin(), succ.end(), route[i]) == succ.end()) {
      throw InvalidRoute("route roads " + std::to_string(route[i - 1]) + " -> " +
                         std::to_string(route[i]) + " are not connected");
    }
  }
  return route;
}

/// One simulated drive: observations as the pipeline consumes them plus the
/// step-aligned ground truth.
struct DriveResult {
  std::vector<Observation> observations;
  std::vector<RoadId> truth;
  std::vector<Pose> true_poses;
};

/// Drives the route at kSpeedMps with 1 Hz sampling. Positions get white
/// Gaussian noise plus a random-walk bias; headings get white noise;
/// detections render the corridor lane geometry into the vehicle frame of
/// the true pose with per-point dropout and noise; the scenario stream
/// reports the true class with probability scenario_accuracy, otherwise a
/// random wrong class. An arc position exactly on a road boundary still
/// belongs to the road being left (the vehicle is at its far node).
inline DriveResult simulate_drive(const NetworkBundle& bundle, const std::vector<RoadId>& route,
                                  const SimConfig& config) {
  config.validate();
  if (route.empty()) throw InvalidRoute("empty route");
  for (size_t i = 1; i < route.size(); ++i) {
    const auto& succ = bundle.graph.road(route[i - 1]).successors;
    if (std::find(succ.begin(), succ.end(), route[i]) == succ.end()) {
      throw InvalidRoute("route is not a connected chain");
    }
  }

  std::vector<double> cum{0.0};
  for (RoadId id : route) cum.push_back(cum.back() + bundle.graph.road(id).length);
  const double total = cum.back();

  Rng rng(config.seed);
  DriveResult out;
  double bias_x = 0.0, bias_y = 0.0;

  const int n_steps = static_cast<int>(std::floor(total / kSpeedMps)) + 1;
  for (int step = 0; step < n_steps; ++step) {
    const double t = static_cast<double>(step);
    const double s = std::min(t * kSpeedMps, total);
    size_t r = 0;
    while (r + 1 < route.size() && s > cum[r + 1] + 1e-9) ++r;
    const Road& road = bundle.graph.road(route[r]);
    const auto [pos, heading] = point_at_arc(road.polyline, s - cum[r]);

    out.true_poses.push_back(Pose{pos, heading});
    out.truth.push_back(route[r]);

    bias_x += config.bias_walk * rng.normal();
    bias_y += config.bias_walk * rng.normal();

    Observation obs;
    obs.t = t;
    obs.pose.position = PointXY{pos.x + bias_x + config.gnss_sigma * rng.normal(),
                                pos.y + bias_y + config.gnss_sigma * rng.normal()};
    obs.pose.heading = normalize_heading(heading + kHeadingNoiseDeg * rng.normal());

    // Lane detections in the vehicle frame of the TRUE pose.
    const double th = heading * kDegToRad;
    const PointXY fwd{std::sin(th), std::cos(th)};
    const PointXY left{-std::cos(th), std::sin(th)};
    std::vector<TypedPoint> detections;
    for (const auto& lane : bundle.lanes) {
      for (const auto& sample : lane.points) {
        const PointXY d = sample.position - pos;
        const double f = d.dot(fwd);
        const double l = d.dot(left);
        if (f < 0.0 || f > kDetectForward || std::abs(l) > kDetectLateral) continue;
        if (rng.uniform() < config.detection_dropout) continue;
        detections.push_back(
            TypedPoint{PointXY{f + config.detection_point_noise * rng.normal(),
                               l + config.detection_point_noise * rng.normal()},
                       sample.type});
      }
    }
    if (!detections.empty()) obs.detections = std::move(detections);

    // Scenario recognition draw.
    const RoadClass true_class = effective_road_class(road);
    RoadClass reported = true_class;
    if (rng.uniform() >= config.scenario_accuracy) {
      const RoadClass others[2] = {true_class == RoadClass::Ordinary ? RoadClass::Expressway
                                                                     : RoadClass::Ordinary,
                                   true_class == RoadClass::Tunnel ? RoadClass::Expressway
                                                                   : RoadClass::Tunnel};
      reported = others[rng.uniform_int(2)];
    }
    ScenarioProbs sp;
    sp.t = t;
    const double rest = (1.0 - kScenarioPeak) / 2.0;
    sp.p_ordinary = reported == RoadClass::Ordinary ? kScenarioPeak : rest;
    sp.p_express = reported == RoadClass::Expressway ? kScenarioPeak : rest;
    sp.p_tunnel = reported == RoadClass::Tunnel ? kScenarioPeak : rest;
    obs.scenario = sp;

    out.observations.push_back(std::move(obs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset bundle files
// ---------------------------------------------------------------------------

/// Writes the full dataset a matching run consumes: map.geojson, lanes.jsonl,
/// traj.jsonl, detections.jsonl, scenario.jsonl, truth.jsonl — plus
/// sim_config.json when the generating config is supplied.
inline void write_simulation_bundle(const NetworkBundle& bundle, const DriveResult& drive,
                                    const std::string& dir,
                                    const SimConfig* config = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(dir) / name);
    if (!out) {
      throw ParseError("cannot open '" + (fs::path(dir) / name).string() + "' for writing");
    }
    return out;
  };

  {
    auto out = open("map.geojson");
    out << bundle.graph.to_geojson().dump(2) << "\n";
  }
  {
    auto out = open("lanes.jsonl");
    for (const auto& lane : bundle.lanes) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& p : lane.points) {
        pts.push_back({p.position.x, p.position.y, p.heading, to_string(p.type)});
      }
      nlohmann::json j{{"lane_id", lane.id},
                       {"type_default", to_string(lane.points.front().type)},
                       {"points", std::move(pts)}};
      out << j.dump() << "\n";
    }
  }
  {
    auto out = open("traj.jsonl");
    for (const auto& obs : drive.observations) {
      nlohmann::json j{{"t", obs.t},
                       {"x", obs.pose.position.x},
                       {"y", obs.pose.position.y},
                       {"heading", obs.pose.heading}};
      out << j.dump() << "\n";
    }
  }
  {
    auto out = open("detections.jsonl");
    for (const auto& obs : drive.observations) {
      if (!obs.detections) continue;
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& p : *obs.detections) {
        pts.push_back({p.position.x, p.position.y, to_string(p.type)});
      }
      out << nlohmann::json{{"t", obs.t}, {"points", std::move(pts)}}.dump() << "\n";
    }
  }
  {
    auto out = open("scenario.jsonl");
    for (const auto& obs : drive.observations) {
      if (!obs.scenario) continue;
      out << nlohmann::json{{"t", obs.t},
                            {"ordinary", obs.scenario->p_ordinary},
                            {"express", obs.scenario->p_express},
                            {"tunnel", obs.scenario->p_tunnel}}
                 .dump()
          << "\n";
    }
  }
  {
    auto out = open("truth.jsonl");
    for (size_t i = 0; i < drive.truth.size(); ++i) {
      out << nlohmann::json{{"t", drive.observations[i].t}, {"road_id", drive.truth[i]}}.dump()
          << "\n";
    }
  }
  if (config) {
    auto out = open("sim_config.json");
    out << sim_config_to_json(*config).dump(2) << "\n";
  }
}

}  // namespace mapmatch
