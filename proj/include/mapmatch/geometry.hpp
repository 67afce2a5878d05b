#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "mapmatch/errors.hpp"

namespace mapmatch {

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

/// Planar point in meters, x east / y north of the dataset origin.
struct PointXY {
  double x = 0.0;
  double y = 0.0;

  PointXY operator+(const PointXY& o) const { return {x + o.x, y + o.y}; }
  PointXY operator-(const PointXY& o) const { return {x - o.x, y - o.y}; }
  PointXY operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const PointXY& o) const { return x == o.x && y == o.y; }

  double dot(const PointXY& o) const { return x * o.x + y * o.y; }
  double cross(const PointXY& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  double squared_norm() const { return x * x + y * y; }
};

inline double distance(const PointXY& a, const PointXY& b) { return (a - b).norm(); }

/// Normalizes an angle in degrees into [0, 360).
inline double normalize_heading(double deg) {
  double h = std::fmod(deg, 360.0);
  if (h < 0.0) h += 360.0;
  // fmod can return 360.0 - tiny, which then rounds to 360.0 exactly.
  if (h >= 360.0) h = 0.0;
  return h;
}

/// Included angle between two headings, in [0, 180].
inline double heading_diff(double theta_a, double theta_b) {
  double d = std::fabs(std::fmod(theta_a - theta_b, 360.0));
  if (d > 180.0) d = 360.0 - d;
  return d;
}

/// Compass bearing of the vector a -> b: 0 = north, clockwise positive.
inline double bearing(const PointXY& a, const PointXY& b) {
  return normalize_heading(std::atan2(b.x - a.x, b.y - a.y) * kRadToDeg);
}

/// Vehicle pose: planar position plus compass heading in [0, 360).
struct Pose {
  PointXY position;
  double heading = 0.0;  // degrees, 0 = north, clockwise
};

/// Local equirectangular projection around a fixed WGS84 origin.
/// Accurate to well under a centimeter over ~10 km extents.
inline PointXY project_wgs84(double lat, double lon, double origin_lat, double origin_lon) {
  if (!std::isfinite(lat) || !std::isfinite(lon) ||
      std::fabs(lat) > 90.0 || std::fabs(lon) > 180.0) {
    throw InvalidCoordinate("latitude/longitude out of range");
  }
  if (!std::isfinite(origin_lat) || !std::isfinite(origin_lon) ||
      std::fabs(origin_lat) > 90.0 || std::fabs(origin_lon) > 180.0) {
    throw InvalidCoordinate("projection origin out of range");
  }
  const double x = (lon - origin_lon) * std::cos(origin_lat * kDegToRad) * kEarthRadiusM * kDegToRad;
  const double y = (lat - origin_lat) * kEarthRadiusM * kDegToRad;
  return {x, y};
}

/// Inverse of project_wgs84 for the same origin. Returns (lat, lon).
inline std::pair<double, double> unproject_wgs84(const PointXY& p, double origin_lat,
                                                 double origin_lon) {
  const double lat = origin_lat + p.y / (kEarthRadiusM * kDegToRad);
  const double lon = origin_lon + p.x / (std::cos(origin_lat * kDegToRad) * kEarthRadiusM * kDegToRad);
  return {lat, lon};
}

/// Result of projecting a point onto a road polyline.
struct Projection {
  double distance = std::numeric_limits<double>::infinity();
  PointXY point;               // nearest point on the polyline
  double road_heading = 0.0;   // bearing of the segment at the nearest point
  bool on_segment = false;     // false only when clamped to a polyline end
  double arc_offset = 0.0;     // meters from the polyline start to `point`
};

inline double polyline_length(std::span<const PointXY> pts) {
  double len = 0.0;
  for (size_t i = 1; i < pts.size(); ++i) len += distance(pts[i - 1], pts[i]);
  return len;
}

/// Minimum-distance projection of `p` onto an open polyline.
///
/// The foot of the perpendicular is used where it falls inside a segment;
/// otherwise the nearest vertex. `on_segment` is false only when the winner
/// is the clamped first or last vertex of the whole polyline, matching the
/// convention that interior vertices still lie on the road.
inline Projection project_to_polyline(std::span<const PointXY> pts, const PointXY& p) {
  Projection best;
  double cum = 0.0;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    const PointXY a = pts[i];
    const PointXY b = pts[i + 1];
    const PointXY ab = b - a;
    const double seg_len2 = ab.squared_norm();
    double t = seg_len2 > 0.0 ? (p - a).dot(ab) / seg_len2 : 0.0;
    const double t_clamped = std::clamp(t, 0.0, 1.0);
    const PointXY foot = a + ab * t_clamped;
    const double d = distance(p, foot);
    const double seg_len = std::sqrt(seg_len2);
    if (d < best.distance) {
      best.distance = d;
      best.point = foot;
      best.road_heading = bearing(a, b);
      best.arc_offset = cum + t_clamped * seg_len;
      const bool at_start = (i == 0 && t <= 0.0);
      const bool at_end = (i + 2 == pts.size() && t >= 1.0);
      best.on_segment = !(at_start || at_end);
    }
    cum += seg_len;
  }
  return best;
}

/// Point and forward bearing at arc length `s` along a polyline (clamped).
inline std::pair<PointXY, double> point_at_arc(std::span<const PointXY> pts, double s) {
  if (s <= 0.0) return {pts.front(), bearing(pts[0], pts[1])};
  double cum = 0.0;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    const double seg = distance(pts[i], pts[i + 1]);
    if (cum + seg >= s && seg > 0.0) {
      const double t = (s - cum) / seg;
      return {pts[i] + (pts[i + 1] - pts[i]) * t, bearing(pts[i], pts[i + 1])};
    }
    cum += seg;
  }
  const size_t n = pts.size();
  return {pts[n - 1], bearing(pts[n - 2], pts[n - 1])};
}

}  // namespace mapmatch
