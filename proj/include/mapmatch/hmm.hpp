#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mapmatch/errors.hpp"
#include "mapmatch/geometry.hpp"
#include "mapmatch/road_graph.hpp"

namespace mapmatch {

/// Parameters of the pose-based emission factors.
struct EmissionParams {
  double sigma = 20.0;          // meters, std dev of the distance Gaussian
  double eps_heading = 1e-4;    // compensation for U-turns / reverse driving
  double candidate_radius = 50.0;
};

/// Parameters of the connectivity-based transition factor.
struct TransitionParams {
  double gamma = 50.0;          // meters, attenuation of connected distance
  double eps_transition = 1e-4; // compensation for non-compliant transitions
  double path_cap = 300.0;      // meters, search cap for connected distance
};

struct MatchParams {
  EmissionParams emission;
  TransitionParams transition;
};

/// Log-density of the zero-mean distance Gaussian at d.
inline double emission_distance(double d, double sigma) {
  return -0.5 * (d / sigma) * (d / sigma) - std::log(sigma) - 0.5 * std::log(2.0 * kPi);
}

/// Log heading factor: log((1 + cos(2*dt))/2) below 90 degrees, log(eps1)
/// beyond. The cosine branch is floored at eps1 so the factor stays finite
/// and continuous into the U-turn regime.
inline double emission_heading(double delta_theta_deg, double eps1) {
  if (delta_theta_deg < 90.0) {
    const double v = (1.0 + std::cos(2.0 * delta_theta_deg * kDegToRad)) / 2.0;
    return std::log(std::max(v, eps1));
  }
  return std::log(eps1);
}

/// One candidate entry in a lattice step.
struct LatticeNode {
  RoadId road = 0;
  double log_joint = 0.0;                 // normalized within the step
  std::optional<RoadId> backpointer;      // previous step's road, if any
  Projection projection;
};

struct LatticeStep {
  std::vector<LatticeNode> nodes;  // sorted by road id
  double norm_shift = 0.0;         // log mass subtracted by normalization
  bool restart = false;            // true when no candidates were available

  bool empty() const { return nodes.empty(); }

  const LatticeNode* find(RoadId id) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), id,
                               [](const LatticeNode& n, RoadId v) { return n.road < v; });
    return (it != nodes.end() && it->road == id) ? &*it : nullptr;
  }
};

/// The per-trajectory Viterbi lattice, advanced one observation at a time.
struct MatcherState {
  std::vector<LatticeStep> steps;

  bool has_steps() const { return !steps.empty(); }

  /// Cumulative normalization shift up to and including `step_index`, so the
  /// unnormalized log joint of a node is log_joint + shift.
  double cumulative_shift(size_t step_index) const {
    double s = 0.0;
    for (size_t i = 0; i <= step_index && i < steps.size(); ++i) s += steps[i].norm_shift;
    return s;
  }

  double unnormalized_log_joint(size_t step_index, RoadId road) const {
    const LatticeNode* n = steps.at(step_index).find(road);
    if (!n) throw UnknownRoad("road not in lattice step");
    return n->log_joint + cumulative_shift(step_index);
  }
};

/// Emission input for one candidate at the current step. `extra_log` carries
/// the lane/scenario factors; zero reproduces the baseline matcher.
struct CandidateEmission {
  RoadId road = 0;
  double emission_log = 0.0;
  double extra_log = 0.0;
  Projection projection;
};

namespace detail {

inline double logsumexp(std::span<const LatticeNode> nodes) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& n : nodes) m = std::max(m, n.log_joint);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (const auto& n : nodes) acc += std::exp(n.log_joint - m);
  return m + std::log(acc);
}

}  // namespace detail

/// Advances the lattice by one step.
///
/// For each candidate the best predecessor is chosen by maximizing
/// prev_log_joint + transition_log(prev, cur); emissions and extra factors
/// are then added. With `normalize`, all log joints are shifted so the step's
/// probabilities sum to one (the shift is recorded, never lost). An empty
/// candidate list records a restart boundary: the following step initializes
/// from emissions alone.
///
/// Ties — in predecessor choice and in any later argmax — break toward the
/// smallest road id.
template <typename TransitionFn>
void viterbi_step(MatcherState& state, std::span<const CandidateEmission> candidates,
                  TransitionFn&& transition_log, bool normalize = true) {
  LatticeStep step;
  if (candidates.empty()) {
    step.restart = true;
    state.steps.push_back(std::move(step));
    return;
  }
  const LatticeStep* prev =
      (!state.steps.empty() && !state.steps.back().empty()) ? &state.steps.back() : nullptr;

  for (const auto& cand : candidates) {
    LatticeNode node;
    node.road = cand.road;
    node.projection = cand.projection;
    if (prev) {
      double best = -std::numeric_limits<double>::infinity();
      std::optional<RoadId> best_prev;
      for (const auto& pn : prev->nodes) {
        const double v = pn.log_joint + transition_log(pn.road, cand.road);
        if (v > best || (v == best && best_prev && pn.road < *best_prev)) {
          best = v;
          best_prev = pn.road;
        }
      }
      node.log_joint = best + cand.emission_log + cand.extra_log;
      node.backpointer = best_prev;
    } else {
      node.log_joint = cand.emission_log + cand.extra_log;
    }
    step.nodes.push_back(node);
  }
  std::sort(step.nodes.begin(), step.nodes.end(),
            [](const LatticeNode& a, const LatticeNode& b) { return a.road < b.road; });
  if (normalize) {
    const double lse = detail::logsumexp(step.nodes);
    for (auto& n : step.nodes) n.log_joint -= lse;
    step.norm_shift = lse;
  }
  state.steps.push_back(std::move(step));
}

/// Argmax road of the final step; ties break to the smallest id.
inline RoadId best_road(const MatcherState& state) {
  if (state.steps.empty() || state.steps.back().empty()) {
    throw EmptyLattice("no candidates in the final step");
  }
  const auto& nodes = state.steps.back().nodes;
  const LatticeNode* best = &nodes.front();
  for (const auto& n : nodes) {
    if (n.log_joint > best->log_joint) best = &n;  // id order makes ties pick the smallest
  }
  return best->road;
}

/// Maximum-likelihood road per step, following backpointers from the last
/// step's argmax. Steps at restart boundaries yield nullopt; each restart
/// segment is backtracked from its own final argmax.
inline std::vector<std::optional<RoadId>> backtrack(const MatcherState& state) {
  const auto& steps = state.steps;
  bool any = std::any_of(steps.begin(), steps.end(),
                         [](const LatticeStep& s) { return !s.empty(); });
  if (steps.empty() || !any) {
    if (steps.empty()) throw EmptyLattice("matcher has no steps");
    return std::vector<std::optional<RoadId>>(steps.size(), std::nullopt);
  }
  std::vector<std::optional<RoadId>> out(steps.size());
  size_t i = steps.size();
  std::optional<RoadId> chain;  // road to follow in the current segment
  while (i-- > 0) {
    const LatticeStep& step = steps[i];
    if (step.empty()) {
      out[i] = std::nullopt;
      chain.reset();
      continue;
    }
    if (!chain) {
      // Tail of a segment: start a fresh backtrack from this step's argmax.
      const LatticeNode* best = &step.nodes.front();
      for (const auto& n : step.nodes) {
        if (n.log_joint > best->log_joint) best = &n;
      }
      out[i] = best->road;
      chain = best->backpointer;
    } else {
      out[i] = *chain;
      const LatticeNode* n = step.find(*chain);
      chain = n ? n->backpointer : std::nullopt;
    }
  }
  return out;
}

/// Pose-based candidate emissions per the distance and heading factors.
inline std::vector<CandidateEmission> pose_emissions(const std::vector<Candidate>& candidates,
                                                     const Pose& pose,
                                                     const EmissionParams& params) {
  std::vector<CandidateEmission> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    CandidateEmission e;
    e.road = c.road;
    e.projection = c.projection;
    e.emission_log = emission_distance(c.projection.distance, params.sigma) +
                     emission_heading(heading_diff(pose.heading, c.projection.road_heading),
                                      params.eps_heading);
    out.push_back(e);
  }
  return out;
}

/// Connectivity transition factor in log domain: 0 for self or a direct
/// successor, -l/gamma for roads connected through intermediates within the
/// cap, log(eps2) otherwise.
inline double transition_log_factor(const RoadGraph& graph, RoadId from, RoadId to,
                                    const TransitionParams& params) {
  const Road& src = graph.road(from);
  if (from == to) return 0.0;
  if (std::find(src.successors.begin(), src.successors.end(), to) != src.successors.end()) {
    return 0.0;
  }
  const auto l = graph.min_connected_distance(from, to, params.path_cap);
  if (l) return -*l / params.gamma;
  return std::log(params.eps_transition);
}

/// Baseline matcher step: candidate query, pose emissions, connectivity
/// transitions. Returns the candidates used (empty means restart boundary).
inline std::vector<Candidate> advance(MatcherState& state, const RoadGraph& graph,
                                      const Pose& pose, const MatchParams& params,
                                      bool normalize = true) {
  auto cands = graph.candidates(pose.position, params.emission.candidate_radius);
  auto emissions = pose_emissions(cands, pose, params.emission);
  viterbi_step(
      state, emissions,
      [&](RoadId from, RoadId to) { return transition_log_factor(graph, from, to, params.transition); },
      normalize);
  return cands;
}

}  // namespace mapmatch
