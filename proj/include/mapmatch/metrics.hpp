#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "mapmatch/errors.hpp"
#include "mapmatch/geometry.hpp"
#include "mapmatch/road_graph.hpp"

namespace mapmatch {

struct EvalReport {
  double match_rate = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long n_correct = 0;
  long n_all = 0;
  double l_correct = 0.0;  // meters
  double l_mm = 0.0;       // meters matched by the method
  double l_gt = 0.0;       // meters of ground truth

  nlohmann::json to_json() const {
    return nlohmann::json{{"match_rate", match_rate}, {"precision", precision},
                          {"recall", recall},         {"f1", f1},
                          {"n_correct", n_correct},   {"n_all", n_all},
                          {"l_correct", l_correct},   {"l_mm", l_mm},
                          {"l_gt", l_gt}};
  }
};

/// Builds a report from raw counts and lengths: precision = L_correct/L_mm,
/// recall = L_correct/L_gt, f1 their harmonic mean.
inline EvalReport report_from_lengths(long n_correct, long n_all, double l_correct, double l_mm,
                                      double l_gt) {
  if (l_mm <= 0.0 || l_gt <= 0.0) {
    throw DegenerateEval("zero matched or ground-truth length");
  }
  EvalReport r;
  r.n_correct = n_correct;
  r.n_all = n_all;
  r.l_correct = l_correct;
  r.l_mm = l_mm;
  r.l_gt = l_gt;
  r.match_rate = n_all > 0 ? static_cast<double>(n_correct) / static_cast<double>(n_all) : 0.0;
  r.precision = l_correct / l_mm;
  r.recall = l_correct / l_gt;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

/// Fraction of steps matched to the true road; unmatched steps count as
/// incorrect.
inline double match_rate(std::span<const std::optional<RoadId>> pred,
                         std::span<const RoadId> truth) {
  if (pred.size() != truth.size()) {
    throw LengthMismatch("prediction has " + std::to_string(pred.size()) + " steps, truth has " +
                         std::to_string(truth.size()));
  }
  if (truth.empty()) throw DegenerateEval("empty sequences");
  long correct = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    if (pred[i] && *pred[i] == truth[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

namespace detail {

/// Arc-length progress between consecutive steps along a road chain: forward
/// progress on the same road, or the remainder of the previous road plus the
/// entry arc of the next. Never negative.
inline double chain_delta(const RoadGraph& graph, RoadId prev_road, double prev_arc,
                          RoadId next_road, double next_arc) {
  if (prev_road == next_road) return std::max(next_arc - prev_arc, 0.0);
  const double remainder = std::max(graph.road(prev_road).length - prev_arc, 0.0);
  return remainder + next_arc;
}

}  // namespace detail

/// Full evaluation of a matched sequence against ground truth. Each step
/// carries the vehicle position used for arc-offset discretization of the
/// traversal lengths; L_correct accrues ground-truth progress on intervals
/// whose both endpoints are matched correctly.
inline EvalReport evaluate(const RoadGraph& graph, std::span<const PointXY> positions,
                           std::span<const std::optional<RoadId>> pred,
                           std::span<const RoadId> truth) {
  if (pred.size() != truth.size() || positions.size() != truth.size()) {
    throw LengthMismatch("positions, prediction, and truth must be step-aligned");
  }
  const size_t n = truth.size();
  if (n < 2) throw DegenerateEval("need at least 2 steps to accumulate lengths");

  long correct = 0;
  for (size_t i = 0; i < n; ++i) {
    if (pred[i] && *pred[i] == truth[i]) ++correct;
  }

  auto arc_on = [&](size_t i, RoadId road) {
    return graph.road(road).project(positions[i]).arc_offset;
  };

  double l_mm = 0.0, l_gt = 0.0, l_correct = 0.0;
  for (size_t i = 1; i < n; ++i) {
    const double gt_delta = detail::chain_delta(graph, truth[i - 1], arc_on(i - 1, truth[i - 1]),
                                                truth[i], arc_on(i, truth[i]));
    l_gt += gt_delta;
    if (pred[i - 1] && pred[i]) {
      l_mm += detail::chain_delta(graph, *pred[i - 1], arc_on(i - 1, *pred[i - 1]), *pred[i],
                                  arc_on(i, *pred[i]));
    }
    if (pred[i - 1] && pred[i] && *pred[i - 1] == truth[i - 1] && *pred[i] == truth[i]) {
      l_correct += gt_delta;
    }
  }

  return report_from_lengths(correct, static_cast<long>(n), l_correct, l_mm, l_gt);
}

}  // namespace mapmatch
