#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mapmatch/config.hpp"
#include "mapmatch/errors.hpp"
#include "mapmatch/geometry.hpp"
#include "mapmatch/hmm.hpp"
#include "mapmatch/icp.hpp"
#include "mapmatch/lane_markings.hpp"
#include "mapmatch/metrics.hpp"
#include "mapmatch/road_graph.hpp"
#include "mapmatch/scenario.hpp"

namespace mapmatch {

/// One timestamped input to the matcher: pose plus whatever extra sensor
/// evidence is available at that instant.
struct Observation {
  double t = 0.0;
  Pose pose;
  std::optional<std::vector<TypedPoint>> detections;  // vehicle frame
  std::optional<ScenarioProbs> scenario;
};

/// One step of matched output.
struct MatchRecord {
  double t = 0.0;
  std::optional<RoadId> road;   // nullopt = Unmatched
  Pose corrected_pose;          // equals the input pose when no correction ran
  std::vector<std::pair<RoadId, double>> probabilities;  // normalized, id order
  bool restart = false;
  bool pose_corrected = false;
  bool registration_degenerate = false;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["t"] = t;
    if (road) {
      j["road_id"] = *road;
    } else {
      j["road_id"] = nullptr;
    }
    j["pose"] = {{"x", corrected_pose.position.x},
                 {"y", corrected_pose.position.y},
                 {"heading", corrected_pose.heading}};
    nlohmann::json probs = nlohmann::json::array();
    for (const auto& [id, p] : probabilities) probs.push_back({id, p});
    j["probabilities"] = std::move(probs);
    j["restart"] = restart;
    j["pose_corrected"] = pose_corrected;
    j["registration_degenerate"] = registration_degenerate;
    return j;
  }

  static MatchRecord from_json(const nlohmann::json& j) {
    MatchRecord r;
    r.t = j.at("t").get<double>();
    if (!j.at("road_id").is_null()) r.road = j.at("road_id").get<RoadId>();
    const auto& pose = j.at("pose");
    r.corrected_pose.position = PointXY{pose.at("x").get<double>(), pose.at("y").get<double>()};
    r.corrected_pose.heading = pose.at("heading").get<double>();
    for (const auto& e : j.at("probabilities")) {
      r.probabilities.emplace_back(e.at(0).get<RoadId>(), e.at(1).get<double>());
    }
    r.restart = j.value("restart", false);
    r.pose_corrected = j.value("pose_corrected", false);
    r.registration_degenerate = j.value("registration_degenerate", false);
    return r;
  }
};

struct SessionOptions {
  bool use_pose_correction = true;
  bool use_lane_factor = true;
  bool use_scenario_factor = true;
};

/// One trajectory's fused matching session. Construct over a bare road graph
/// (baseline behavior) or an enriched map (enables registration and the lane
/// factor); feed observations in timestamp order; finalize for the
/// authoritative backtracked sequence.
class MatchSession {
 public:
  MatchSession(const RoadGraph& graph, const RunConfig& config, SessionOptions options = {})
      : graph_(&graph), enriched_(nullptr), config_(config), options_(options) {}

  MatchSession(const EnrichedMap& enriched, const RunConfig& config, SessionOptions options = {})
      : graph_(&enriched.graph), enriched_(&enriched), config_(config), options_(options) {}

  MatchRecord match_step(const Observation& obs) {
    if (last_t_ && obs.t <= *last_t_) {
      throw ParseError("observation timestamps must be strictly increasing");
    }
    last_t_ = obs.t;

    // (1) Candidates around the raw pose.
    const auto cands = graph_->candidates(obs.pose.position, config_.candidate_radius);

    // (2) Pose correction by registration against the enriched lane cloud.
    MatchRecord rec;
    rec.t = obs.t;
    rec.corrected_pose = obs.pose;
    if (options_.use_pose_correction && enriched_ && obs.detections &&
        obs.detections->size() >= 6 && !enriched_->sampled_cloud.empty()) {
      try {
        const IcpResult icp = icp_register(*obs.detections, *enriched_, obs.pose, icp_params());
        rec.corrected_pose = icp.transform.apply(obs.pose);
        rec.pose_corrected = true;
      } catch (const RegistrationDegenerate&) {
        rec.registration_degenerate = true;
      }
    }

    // (3) Emissions from the corrected pose; extra factors per candidate.
    std::vector<CandidateEmission> emissions;
    emissions.reserve(cands.size());
    std::vector<RoadId> ids;
    ids.reserve(cands.size());
    for (const auto& c : cands) {
      CandidateEmission e;
      e.road = c.road;
      e.projection = graph_->road(c.road).project(rec.corrected_pose.position);
      e.emission_log =
          emission_distance(e.projection.distance, config_.sigma_vehicle) +
          emission_heading(heading_diff(rec.corrected_pose.heading, e.projection.road_heading),
                           config_.eps_heading);
      emissions.push_back(e);
      ids.push_back(c.road);
    }
    // The lane factor rates detected markings against each candidate's lane
    // context, so it needs detections this step — and a successfully
    // registered pose when pose correction is enabled. Without that evidence
    // the factor stays uniform and the step degrades to plain HMM matching.
    const bool lane_evidence =
        obs.detections && (!options_.use_pose_correction || rec.pose_corrected);
    if (enriched_ && options_.use_lane_factor && lane_evidence) {
      LaneFactorParams lp;
      lp.sigma = config_.sigma_lane;
      lp.eps_heading = config_.eps_heading;
      lp.context_radius = config_.lane_context_radius;
      lp.relative_floor = config_.pl_floor;
      const auto pl = lane_emission_factor(rec.corrected_pose, *enriched_, ids, lp);
      for (size_t i = 0; i < emissions.size(); ++i) emissions[i].extra_log += pl[i];
    }
    if (options_.use_scenario_factor && obs.scenario) {
      for (auto& e : emissions) {
        e.extra_log += scenario_emission(*obs.scenario, effective_road_class(graph_->road(e.road)),
                                         config_.scenario_floor);
      }
    }

    // (4) One Viterbi step with cached connectivity transitions.
    viterbi_step(state_, emissions,
                 [this](RoadId from, RoadId to) { return transition(from, to); }, true);

    // (5) Online record from the newly appended lattice step.
    const LatticeStep& step = state_.steps.back();
    rec.restart = step.restart;
    if (!step.empty()) {
      const LatticeNode* best = &step.nodes.front();
      for (const auto& n : step.nodes) {
        if (n.log_joint > best->log_joint) best = &n;
      }
      rec.road = best->road;
      for (const auto& n : step.nodes) {
        rec.probabilities.emplace_back(n.road, std::exp(n.log_joint));
      }
    }
    online_.push_back(rec);
    return rec;
  }

  /// Full-lattice backtrack; per-step records revised with the backtracked
  /// road. The returned sequence is authoritative over the online outputs.
  std::vector<MatchRecord> finalize() const {
    if (state_.steps.empty()) throw EmptyLattice("no observations were processed");
    const auto seq = backtrack(state_);
    std::vector<MatchRecord> out = online_;
    for (size_t i = 0; i < out.size(); ++i) out[i].road = seq[i];
    return out;
  }

  const MatcherState& state() const { return state_; }
  const std::vector<MatchRecord>& online_records() const { return online_; }

  bool ever_had_candidates() const {
    return std::any_of(state_.steps.begin(), state_.steps.end(),
                       [](const LatticeStep& s) { return !s.empty(); });
  }

 private:
  IcpParams icp_params() const {
    IcpParams p;
    p.f_type = config_.f_type;
    p.max_iterations = config_.icp_max_iterations;
    p.convergence_tol = config_.icp_convergence_tol;
    p.max_correspondence = config_.icp_max_correspondence;
    p.rotation_cap_deg = config_.icp_rotation_cap_deg;
    p.estimate_rotation = config_.icp_estimate_rotation;
    return p;
  }

  double transition(RoadId from, RoadId to) {
    const auto key = std::make_pair(from, to);
    auto it = transition_cache_.find(key);
    if (it != transition_cache_.end()) return it->second;
    const double v = transition_log_factor(*graph_, from, to, config_.transition_params());
    transition_cache_.emplace(key, v);
    return v;
  }

  const RoadGraph* graph_;
  const EnrichedMap* enriched_;
  RunConfig config_;
  SessionOptions options_;
  MatcherState state_;
  std::vector<MatchRecord> online_;
  std::optional<double> last_t_;
  std::map<std::pair<RoadId, RoadId>, double> transition_cache_;
};

// ---------------------------------------------------------------------------
// Stream I/O
// ---------------------------------------------------------------------------

/// A raw trajectory point before heading derivation.
struct TrajectoryPoint {
  double t = 0.0;
  PointXY position;
  std::optional<double> heading;
};

/// Trajectory JSONL: `{"t": s, "x":.., "y":..}` or `{"t": s, "lat":..,
/// "lon":..}`, optional `"heading"`. Lat/lon records are projected with the
/// graph origin. Headings, where absent, derive from consecutive positions.
inline std::vector<Observation> load_trajectory(const std::string& path, const RoadGraph& graph) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::vector<TrajectoryPoint> pts;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid JSON", line_no);
    TrajectoryPoint p;
    try {
      p.t = j.at("t").get<double>();
      if (j.contains("x") && j.contains("y")) {
        p.position = PointXY{j.at("x").get<double>(), j.at("y").get<double>()};
      } else if (j.contains("lat") && j.contains("lon")) {
        p.position = graph.project_to_local(j.at("lat").get<double>(), j.at("lon").get<double>());
      } else {
        throw ParseError("trajectory point needs x/y or lat/lon", line_no);
      }
      if (j.contains("heading")) p.heading = normalize_heading(j.at("heading").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad trajectory record: ") + e.what(), line_no);
    }
    pts.push_back(p);
  }

  std::vector<Observation> out;
  out.reserve(pts.size());
  double last_heading = 0.0;
  for (size_t i = 0; i < pts.size(); ++i) {
    Observation obs;
    obs.t = pts[i].t;
    obs.pose.position = pts[i].position;
    if (pts[i].heading) {
      obs.pose.heading = *pts[i].heading;
    } else {
      // Forward bearing to the next point; the first point borrows the
      // bearing of its outgoing leg, stationary points carry the last value.
      const size_t a = i == 0 ? 0 : i - 1;
      const size_t b = i == 0 ? std::min<size_t>(1, pts.size() - 1) : i;
      if (a != b && distance(pts[a].position, pts[b].position) > 1e-9) {
        last_heading = bearing(pts[a].position, pts[b].position);
      }
      obs.pose.heading = last_heading;
    }
    last_heading = obs.pose.heading;
    out.push_back(std::move(obs));
  }
  return out;
}

/// Detections JSONL: `{"t": s, "points": [[x, y, "solid"|"dashed"], ...]}`
/// in the vehicle frame. Returned sorted by t.
inline std::vector<std::pair<double, std::vector<TypedPoint>>> load_detections(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::vector<std::pair<double, std::vector<TypedPoint>>> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid JSON", line_no);
    try {
      std::vector<TypedPoint> points;
      for (const auto& p : j.at("points")) {
        points.push_back(TypedPoint{PointXY{p.at(0).get<double>(), p.at(1).get<double>()},
                                    mark_type_from_string(p.at(2).get<std::string>())});
      }
      out.emplace_back(j.at("t").get<double>(), std::move(points));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad detection record: ") + e.what(), line_no);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

/// Exact-timestamp lookup (1e-6 s tolerance) into a sorted detection stream.
inline std::optional<std::vector<TypedPoint>> detections_at(
    const std::vector<std::pair<double, std::vector<TypedPoint>>>& stream, double t) {
  auto it = std::lower_bound(stream.begin(), stream.end(), t - 1e-6,
                             [](const auto& a, double v) { return a.first < v; });
  if (it != stream.end() && std::abs(it->first - t) <= 1e-6) return it->second;
  return std::nullopt;
}

/// Ground-truth JSONL: `{"t": s, "road_id": int}`.
inline std::vector<std::pair<double, RoadId>> load_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::vector<std::pair<double, RoadId>> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid JSON", line_no);
    try {
      out.emplace_back(j.at("t").get<double>(), j.at("road_id").get<RoadId>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad ground-truth record: ") + e.what(), line_no);
    }
  }
  return out;
}

inline std::vector<MatchRecord> load_match_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::vector<MatchRecord> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid JSON", line_no);
    if (j.contains("final")) continue;  // trailing summary block
    try {
      out.push_back(MatchRecord::from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad match record: ") + e.what(), line_no);
    }
  }
  return out;
}

/// Writes the finalized records one per line, then the summary block.
inline void save_match_records(const std::vector<MatchRecord>& records, std::ostream& out) {
  nlohmann::json roads = nlohmann::json::array();
  for (const auto& r : records) {
    out << r.to_json().dump() << "\n";
    if (r.road) {
      roads.push_back(*r.road);
    } else {
      roads.push_back(nullptr);
    }
  }
  nlohmann::json summary{{"final", true}, {"roads", std::move(roads)},
                         {"n_steps", records.size()}};
  out << summary.dump() << "\n";
}

/// GeoJSON overlay of a finished run: the corrected trajectory, every
/// distinct matched road's geometry, and one point per step.
inline nlohmann::json match_overlay_geojson(const std::vector<MatchRecord>& records,
                                            const RoadGraph& graph) {
  nlohmann::json features = nlohmann::json::array();

  nlohmann::json traj_coords = nlohmann::json::array();
  for (const auto& r : records) {
    auto [lat, lon] = unproject_wgs84(r.corrected_pose.position, graph.origin_lat(),
                                      graph.origin_lon());
    traj_coords.push_back({lon, lat});
  }
  features.push_back({{"type", "Feature"},
                      {"geometry", {{"type", "LineString"}, {"coordinates", traj_coords}}},
                      {"properties", {{"kind", "trajectory"}}}});

  std::vector<RoadId> matched;
  for (const auto& r : records) {
    if (r.road && std::find(matched.begin(), matched.end(), *r.road) == matched.end()) {
      matched.push_back(*r.road);
    }
  }
  std::sort(matched.begin(), matched.end());
  for (RoadId id : matched) {
    const Road& road = graph.road(id);
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& p : road.polyline) {
      auto [lat, lon] = unproject_wgs84(p, graph.origin_lat(), graph.origin_lon());
      coords.push_back({lon, lat});
    }
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", coords}}},
                        {"properties", {{"kind", "matched_road"}, {"road_id", id}}}});
  }

  for (const auto& r : records) {
    auto [lat, lon] = unproject_wgs84(r.corrected_pose.position, graph.origin_lat(),
                                      graph.origin_lon());
    nlohmann::json props{{"kind", "step"}, {"t", r.t}};
    if (r.road) {
      props["road_id"] = *r.road;
    } else {
      props["road_id"] = nullptr;
    }
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Point"}, {"coordinates", {lon, lat}}}},
                        {"properties", props}});
  }

  return {{"type", "FeatureCollection"}, {"features", features}};
}

}  // namespace mapmatch
