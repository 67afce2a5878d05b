#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mapmatch/errors.hpp"
#include "mapmatch/road_graph.hpp"

namespace mapmatch {

/// Per-timestamp driving-scenario class probabilities from the upstream
/// recognizer. Always normalized: the three values sum to 1.
struct ScenarioProbs {
  double t = 0.0;
  double p_ordinary = 1.0 / 3.0;
  double p_express = 1.0 / 3.0;
  double p_tunnel = 1.0 / 3.0;

  static ScenarioProbs uniform(double t = 0.0) { return ScenarioProbs{t, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}; }
};

/// Scenario emission factor: the log-probability the recognizer assigned to
/// the candidate's (effective) class, floored to stay finite.
inline double scenario_emission(const ScenarioProbs& probs, RoadClass road_class,
                                double floor = 1e-4) {
  double p = 0.0;
  switch (road_class) {
    case RoadClass::Ordinary: p = probs.p_ordinary; break;
    case RoadClass::Expressway: p = probs.p_express; break;
    case RoadClass::Tunnel: p = probs.p_tunnel; break;
  }
  return std::log(std::max(p, floor));
}

/// Time-indexed scenario stream with nearest-timestamp lookup. Queries
/// farther than `stale_window` seconds from every record return uniform
/// probabilities.
class ScenarioStream {
 public:
  ScenarioStream() = default;
  explicit ScenarioStream(std::vector<ScenarioProbs> records, double stale_window = 2.0)
      : records_(std::move(records)), stale_window_(stale_window) {}

  static ScenarioStream load(const std::string& path, double stale_window = 2.0) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::vector<ScenarioProbs> records;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw ParseError("invalid JSON", line_no);
      ScenarioProbs p;
      try {
        p.t = j.at("t").get<double>();
        p.p_ordinary = j.at("ordinary").get<double>();
        p.p_express = j.at("express").get<double>();
        p.p_tunnel = j.at("tunnel").get<double>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad scenario record: ") + e.what(), line_no);
      }
      for (double v : {p.p_ordinary, p.p_express, p.p_tunnel}) {
        if (v < 0.0 || v > 1.0 || !std::isfinite(v)) {
          throw ParseError("scenario probability outside [0, 1]", line_no);
        }
      }
      const double sum = p.p_ordinary + p.p_express + p.p_tunnel;
      if (sum <= 0.0) throw ParseError("scenario probabilities sum to zero", line_no);
      p.p_ordinary /= sum;
      p.p_express /= sum;
      p.p_tunnel /= sum;
      if (!records.empty() && p.t <= records.back().t) {
        throw ParseError("scenario timestamps must be strictly increasing", line_no);
      }
      records.push_back(p);
    }
    return ScenarioStream(std::move(records), stale_window);
  }

  /// Nearest record by |t − t_record|; ties prefer the earlier record. A gap
  /// beyond the stale window degrades to uniform.
  ScenarioProbs lookup(double t) const {
    if (records_.empty()) return ScenarioProbs::uniform(t);
    auto it = std::lower_bound(records_.begin(), records_.end(), t,
                               [](const ScenarioProbs& p, double v) { return p.t < v; });
    const ScenarioProbs* best = nullptr;
    if (it != records_.end()) best = &*it;
    if (it != records_.begin()) {
      const ScenarioProbs* before = &*std::prev(it);
      if (!best || std::abs(before->t - t) <= std::abs(best->t - t)) best = before;
    }
    if (std::abs(best->t - t) > stale_window_) return ScenarioProbs::uniform(t);
    return *best;
  }

  bool empty() const { return records_.empty(); }
  size_t size() const { return records_.size(); }
  double stale_window() const { return stale_window_; }

 private:
  std::vector<ScenarioProbs> records_;
  double stale_window_ = 2.0;
};

}  // namespace mapmatch
