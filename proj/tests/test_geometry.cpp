#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mapmatch/geometry.hpp"
#include "oracles.hpp"

using namespace mapmatch;
using Catch::Approx;

TEST_CASE("projection maps the origin to (0, 0)") {
  const PointXY p = project_wgs84(31.2, 121.5, 31.2, 121.5);
  CHECK(p.x == Approx(0.0).margin(1e-12));
  CHECK(p.y == Approx(0.0).margin(1e-12));
}

TEST_CASE("projection scale matches the equirectangular formula") {
  // 0.001 degrees of latitude at the equator.
  const PointXY north = project_wgs84(0.001, 0.0, 0.0, 0.0);
  CHECK(north.x == Approx(0.0).margin(1e-12));
  CHECK(north.y == Approx(111.1949).margin(1e-3));
  // 0.001 degrees of longitude at the equator (cos 0 = 1).
  const PointXY east = project_wgs84(0.0, 0.001, 0.0, 0.0);
  CHECK(east.x == Approx(111.1949).margin(1e-3));
  CHECK(east.y == Approx(0.0).margin(1e-12));
}

TEST_CASE("projection rejects out-of-range coordinates") {
  CHECK_THROWS_AS(project_wgs84(91.0, 0.0, 0.0, 0.0), InvalidCoordinate);
  CHECK_THROWS_AS(project_wgs84(0.0, 181.0, 0.0, 0.0), InvalidCoordinate);
  CHECK_THROWS_AS(project_wgs84(0.0, 0.0, -91.0, 0.0), InvalidCoordinate);
  CHECK_THROWS_AS(project_wgs84(std::nan(""), 0.0, 0.0, 0.0), InvalidCoordinate);
}

TEST_CASE("unprojection inverts projection") {
  const PointXY p = project_wgs84(31.24, 121.49, 31.2, 121.5);
  const auto [lat, lon] = unproject_wgs84(p, 31.2, 121.5);
  CHECK(lat == Approx(31.24).margin(1e-12));
  CHECK(lon == Approx(121.49).margin(1e-12));
}

TEST_CASE("heading difference handles wrap-around") {
  CHECK(heading_diff(10, 10) == Approx(0.0));
  CHECK(heading_diff(350, 10) == Approx(20.0));
  CHECK(heading_diff(90, 270) == Approx(180.0));
}

TEST_CASE("heading difference is symmetric and bounded") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-720.0, 720.0);
  for (int i = 0; i < 500; ++i) {
    const double a = dist(rng), b = dist(rng);
    const double d = heading_diff(a, b);
    CHECK(d >= 0.0);
    CHECK(d <= 180.0);
    CHECK(d == Approx(heading_diff(b, a)).margin(1e-9));
    CHECK(heading_diff(a, a) == Approx(0.0).margin(1e-9));
  }
}

TEST_CASE("heading normalization lands in [0, 360)") {
  CHECK(normalize_heading(360.0) == Approx(0.0));
  CHECK(normalize_heading(-90.0) == Approx(270.0));
  CHECK(normalize_heading(725.0) == Approx(5.0));
  CHECK(normalize_heading(-1e-13) < 360.0);
  CHECK(normalize_heading(-1e-13) >= 0.0);
}

TEST_CASE("bearing uses the compass convention") {
  CHECK(bearing({0, 0}, {0, 1}) == Approx(0.0));    // north
  CHECK(bearing({0, 0}, {1, 0}) == Approx(90.0));   // east
  CHECK(bearing({0, 0}, {0, -1}) == Approx(180.0)); // south
  CHECK(bearing({0, 0}, {-1, 0}) == Approx(270.0)); // west
}

TEST_CASE("perpendicular foot projection on a single segment") {
  const std::vector<PointXY> road{{0, 0}, {10, 0}};
  const Projection proj = project_to_polyline(road, PointXY{5, 3});
  CHECK(proj.distance == Approx(3.0));
  CHECK(proj.point.x == Approx(5.0));
  CHECK(proj.point.y == Approx(0.0));
  CHECK(proj.road_heading == Approx(90.0));
  CHECK(proj.on_segment);
  CHECK(proj.arc_offset == Approx(5.0));
}

TEST_CASE("projection clamps to the nearest endpoint") {
  const std::vector<PointXY> road{{0, 0}, {10, 0}};
  const Projection proj = project_to_polyline(road, PointXY{-4, 3});
  CHECK(proj.distance == Approx(5.0));  // 3-4-5 triangle to (0, 0)
  CHECK(proj.point.x == Approx(0.0));
  CHECK(proj.point.y == Approx(0.0));
  CHECK_FALSE(proj.on_segment);
  CHECK(proj.arc_offset == Approx(0.0));
}

TEST_CASE("a point on the polyline projects at distance zero") {
  const std::vector<PointXY> road{{0, 0}, {10, 0}, {10, 10}};
  const Projection proj = project_to_polyline(road, PointXY{10, 4});
  CHECK(proj.distance == Approx(0.0).margin(1e-12));
  CHECK(proj.on_segment);
  CHECK(proj.arc_offset == Approx(14.0));
}

TEST_CASE("interior vertices still count as on the road") {
  const std::vector<PointXY> road{{0, 0}, {10, 0}, {20, 5}};
  // Nearest point is the interior vertex (10, 0).
  const Projection proj = project_to_polyline(road, PointXY{10, -2});
  CHECK(proj.point.x == Approx(10.0));
  CHECK(proj.on_segment);
}

TEST_CASE("projection distance matches a dense-sampling oracle") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coord(-50.0, 50.0);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<PointXY> poly;
    const int n = 2 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) poly.push_back({coord(rng), coord(rng)});
    bool degenerate = false;
    for (size_t i = 1; i < poly.size(); ++i) {
      if (distance(poly[i - 1], poly[i]) < 1e-9) degenerate = true;
    }
    if (degenerate) continue;
    for (int q = 0; q < 10; ++q) {
      const PointXY p{coord(rng), coord(rng)};
      const double exact = project_to_polyline(poly, p).distance;
      const double brute = testutil::brute_force_polyline_distance(poly, p);
      CHECK(exact <= brute + 1e-9);
      CHECK(exact >= brute - 0.05);  // dense sampling overshoots slightly
    }
  }
}

TEST_CASE("polyline length sums the segments") {
  const std::vector<PointXY> poly{{0, 0}, {3, 4}, {3, 14}};
  CHECK(polyline_length(poly) == Approx(15.0));
}

TEST_CASE("arc interpolation walks the polyline") {
  const std::vector<PointXY> poly{{0, 0}, {10, 0}, {10, 10}};
  auto [p1, h1] = point_at_arc(poly, 5.0);
  CHECK(p1.x == Approx(5.0));
  CHECK(p1.y == Approx(0.0));
  CHECK(h1 == Approx(90.0));
  auto [p2, h2] = point_at_arc(poly, 15.0);
  CHECK(p2.x == Approx(10.0));
  CHECK(p2.y == Approx(5.0));
  CHECK(h2 == Approx(0.0));
  auto [p3, h3] = point_at_arc(poly, -1.0);  // clamped to the start
  CHECK(p3.x == Approx(0.0));
  CHECK(h3 == Approx(90.0));
  auto [p4, h4] = point_at_arc(poly, 99.0);  // clamped to the end
  CHECK(p4.y == Approx(10.0));
  CHECK(h4 == Approx(0.0));
}
