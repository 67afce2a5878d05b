#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "mapmatch/errors.hpp"
#include "mapmatch/geometry.hpp"
#include "mapmatch/hmm.hpp"
#include "mapmatch/lane_markings.hpp"

namespace mapmatch {

/// One lane-marking detection or map point: planar position plus type.
struct TypedPoint {
  PointXY position;
  MarkType type = MarkType::Solid;
};

/// Additive penalty when the detected type disagrees with the map type.
inline double type_loss(MarkType t_v, MarkType t_m, double f_type) {
  return t_v == t_m ? 0.0 : f_type;
}

/// Registration cost between a detection and a map point:
/// sqrt(planar² + type_loss²). Always ≥ planar distance, equal iff the
/// types match.
inline double correspondence_cost(const TypedPoint& p_v, const TypedPoint& p_m, double f_type) {
  const double dx = p_v.position.x - p_m.position.x;
  const double dy = p_v.position.y - p_m.position.y;
  const double lt = type_loss(p_v.type, p_m.type, f_type);
  return std::sqrt(dx * dx + dy * dy + lt * lt);
}

struct IcpParams {
  double f_type = 2.0;
  int max_iterations = 30;
  double convergence_tol = 0.01;    // meters of point-cloud motion per iteration
  double max_correspondence = 3.0;  // meters, cost gate for keeping a pair
  double rotation_cap_deg = 10.0;   // cumulative rotation clamp
  bool estimate_rotation = true;
};

/// Planar rigid motion: CCW rotation (degrees) followed by translation.
struct RigidTransform2D {
  double rotation = 0.0;  // degrees, in (−180, 180]
  PointXY translation{0.0, 0.0};

  PointXY apply(PointXY p) const {
    const double c = std::cos(rotation * kDegToRad);
    const double s = std::sin(rotation * kDegToRad);
    return PointXY{c * p.x - s * p.y + translation.x, s * p.x + c * p.y + translation.y};
  }

  /// Rotating a direction CCW by φ decreases its compass bearing by φ.
  Pose apply(const Pose& pose) const {
    return Pose{apply(pose.position), normalize_heading(pose.heading - rotation)};
  }

  /// The transform q ↦ other(this(q)).
  RigidTransform2D then(const RigidTransform2D& other) const {
    RigidTransform2D out;
    out.rotation = normalize_rotation(rotation + other.rotation);
    out.translation = other.apply(translation);
    return out;
  }

  static double normalize_rotation(double deg) {
    double r = std::fmod(deg, 360.0);
    if (r > 180.0) r -= 360.0;
    if (r <= -180.0) r += 360.0;
    return r;
  }
};

/// Per-iteration record: pair count and mean squared cost over the kept pairs
/// before and after the alignment substep (non-increasing by construction).
struct IcpIteration {
  int pairs = 0;
  double mean_sq_before = 0.0;
  double mean_sq_after = 0.0;
  RigidTransform2D incremental;
};

struct IcpResult {
  RigidTransform2D transform;   // map-frame correction applied to detections
  double mean_residual = 0.0;   // mean correspondence cost at the final pose
  int iterations = 0;
  std::vector<IcpIteration> trace;
};

/// Converts a vehicle-frame point (x forward, y left) into the map frame for
/// a vehicle at `pose` (compass heading, degrees).
inline PointXY vehicle_to_map(PointXY p, const Pose& pose) {
  const double th = pose.heading * kDegToRad;
  const PointXY fwd{std::sin(th), std::cos(th)};
  const PointXY left{-std::cos(th), std::sin(th)};
  return pose.position + fwd * p.x + left * p.y;
}

namespace detail {

struct Correspondence {
  size_t detection = 0;  // index into the moved detection cloud
  size_t map_point = 0;  // index into enriched.sampled_cloud
  double cost = 0.0;
};

/// Nearest map point by correspondence cost, gated at `max_cost`. Ties break
/// to the smallest cloud index.
inline std::optional<Correspondence> best_match(const EnrichedMap& em, const TypedPoint& moved,
                                                size_t det_index, double f_type,
                                                double max_cost) {
  // cost ≥ planar distance, so a planar radius query at max_cost is complete.
  const auto nearby = em.cloud_index.query(moved.position, max_cost);
  double best = std::numeric_limits<double>::infinity();
  std::optional<size_t> best_idx;
  for (size_t idx : nearby) {
    const CloudPoint& cp = em.sampled_cloud[idx];
    const double c = correspondence_cost(moved, TypedPoint{cp.position, cp.type}, f_type);
    if (c < best) {
      best = c;
      best_idx = idx;
    }
  }
  if (!best_idx || best > max_cost) return std::nullopt;
  return Correspondence{det_index, *best_idx, best};
}

}  // namespace detail

/// Type-aware 2D ICP of a vehicle-frame detection cloud against the enriched
/// map's lane point cloud. Alternates gated nearest-neighbor correspondence
/// with a closed-form rigid fit; the cumulative rotation is clamped at
/// ±rotation_cap_deg. Stops when an iteration moves the cloud by less than
/// convergence_tol. Throws RegistrationDegenerate when fewer than 3 pairs
/// survive the gate.
inline IcpResult icp_register(std::span<const TypedPoint> detections, const EnrichedMap& em,
                              const Pose& init_pose, const IcpParams& params) {
  // Map-frame working copy of the detections.
  std::vector<TypedPoint> base;
  base.reserve(detections.size());
  for (const auto& d : detections) {
    base.push_back(TypedPoint{vehicle_to_map(d.position, init_pose), d.type});
  }

  IcpResult result;
  for (int iter = 0; iter < params.max_iterations; ++iter) {
    std::vector<TypedPoint> moved;
    moved.reserve(base.size());
    for (const auto& p : base) {
      moved.push_back(TypedPoint{result.transform.apply(p.position), p.type});
    }

    std::vector<detail::Correspondence> pairs;
    for (size_t i = 0; i < moved.size(); ++i) {
      auto m = detail::best_match(em, moved[i], i, params.f_type, params.max_correspondence);
      if (m) pairs.push_back(*m);
    }
    if (pairs.size() < 3) {
      throw RegistrationDegenerate("only " + std::to_string(pairs.size()) +
                                   " correspondences survived the gate");
    }

    double sq_before = 0.0;
    PointXY a_bar{0, 0}, b_bar{0, 0};
    for (const auto& pr : pairs) {
      sq_before += pr.cost * pr.cost;
      a_bar = a_bar + moved[pr.detection].position;
      b_bar = b_bar + em.sampled_cloud[pr.map_point].position;
    }
    const double n = static_cast<double>(pairs.size());
    sq_before /= n;
    a_bar = a_bar * (1.0 / n);
    b_bar = b_bar * (1.0 / n);

    double sum_cross = 0.0, sum_dot = 0.0;
    for (const auto& pr : pairs) {
      const PointXY a = moved[pr.detection].position - a_bar;
      const PointXY b = em.sampled_cloud[pr.map_point].position - b_bar;
      sum_cross += a.cross(b);
      sum_dot += a.dot(b);
    }
    double phi_deg = 0.0;
    if (params.estimate_rotation && (sum_cross != 0.0 || sum_dot != 0.0)) {
      phi_deg = std::atan2(sum_cross, sum_dot) * kRadToDeg;
    }
    // Clamp the cumulative rotation; the translation is re-fit for whatever
    // rotation survives, which keeps the alignment substep non-increasing.
    const double capped_total =
        std::clamp(result.transform.rotation + phi_deg, -params.rotation_cap_deg,
                   params.rotation_cap_deg);
    phi_deg = capped_total - result.transform.rotation;

    RigidTransform2D inc;
    inc.rotation = phi_deg;
    inc.translation = b_bar - inc.apply(a_bar);  // t = b̄ − R·ā (apply has t = 0 here)

    double sq_after = 0.0;
    double max_motion = 0.0;
    for (const auto& pr : pairs) {
      const PointXY p = inc.apply(moved[pr.detection].position);
      const PointXY q = em.sampled_cloud[pr.map_point].position;
      const double lt = type_loss(moved[pr.detection].type, em.sampled_cloud[pr.map_point].type,
                                  params.f_type);
      sq_after += (p - q).squared_norm() + lt * lt;
    }
    sq_after /= n;
    for (const auto& p : moved) {
      max_motion = std::max(max_motion, (inc.apply(p.position) - p.position).norm());
    }

    result.transform = result.transform.then(inc);
    result.iterations = iter + 1;
    result.trace.push_back(IcpIteration{static_cast<int>(pairs.size()), sq_before, sq_after, inc});

    if (max_motion < params.convergence_tol) break;
  }

  // Final residual: mean cost under the final transform.
  std::vector<detail::Correspondence> final_pairs;
  for (size_t i = 0; i < base.size(); ++i) {
    TypedPoint moved{result.transform.apply(base[i].position), base[i].type};
    auto m = detail::best_match(em, moved, i, params.f_type, params.max_correspondence);
    if (m) final_pairs.push_back(*m);
  }
  if (final_pairs.size() < 3) {
    throw RegistrationDegenerate("only " + std::to_string(final_pairs.size()) +
                                 " correspondences at the final pose");
  }
  double total = 0.0;
  for (const auto& pr : final_pairs) total += pr.cost;
  result.mean_residual = total / static_cast<double>(final_pairs.size());
  return result;
}

// ---------------------------------------------------------------------------
// Lane-marking emission factor
// ---------------------------------------------------------------------------

/// Geometry of one nearby lane relative to the (corrected) pose.
struct LaneContext {
  int64_t lane_id = 0;
  double distance = 0.0;       // d_lane_j, meters, ≥ 0
  double heading_diff = 0.0;   // Δθ_j, degrees, [0, 180]
};

/// All lanes whose point-to-polyline distance from the pose is within
/// `radius`, in lane-id order.
inline std::vector<LaneContext> lane_context(const Pose& pose, const EnrichedMap& em,
                                             double radius) {
  std::vector<LaneContext> out;
  for (const auto& [id, lane] : em.lanes) {
    const auto poly = lane.polyline();
    const Projection proj = project_to_polyline(poly, pose.position);
    if (proj.distance <= radius) {
      out.push_back(LaneContext{id, proj.distance,
                                heading_diff(pose.heading, proj.road_heading)});
    }
  }
  return out;
}

struct LaneFactorParams {
  double sigma = 3.0;            // lane-scale distance spread
  double eps_heading = 1e-4;
  double context_radius = 10.0;  // meters
  double relative_floor = 1e-4;  // of the max candidate mass, pre-normalization
};

/// Lane-marking detection factor per candidate road, in log domain and
/// normalized over the candidates: for each road, the association-weighted
/// sum over nearby lanes of the distance Gaussian times the heading factor.
/// No nearby lanes (or no lane associated with any candidate) leaves every
/// candidate at log-factor 0.
inline std::vector<double> lane_emission_factor(const Pose& pose, const EnrichedMap& em,
                                                std::span<const RoadId> candidates,
                                                const LaneFactorParams& params) {
  std::vector<double> out(candidates.size(), 0.0);
  if (candidates.empty()) return out;
  const auto context = lane_context(pose, em, params.context_radius);
  if (context.empty()) return out;

  std::vector<double> raw(candidates.size(), 0.0);
  for (const auto& lc : context) {
    const double density = std::exp(emission_distance(lc.distance, params.sigma)) *
                           std::exp(emission_heading(lc.heading_diff, params.eps_heading));
    for (size_t i = 0; i < candidates.size(); ++i) {
      raw[i] += em.association_probability(lc.lane_id, candidates[i]) * density;
    }
  }
  const double max_raw = *std::max_element(raw.begin(), raw.end());
  if (max_raw <= 0.0) return out;

  double sum = 0.0;
  for (auto& v : raw) {
    v = std::max(v, max_raw * params.relative_floor);
    sum += v;
  }
  for (size_t i = 0; i < candidates.size(); ++i) out[i] = std::log(raw[i] / sum);
  return out;
}

}  // namespace mapmatch
