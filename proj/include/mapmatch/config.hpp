#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"

#include "mapmatch/errors.hpp"
#include "mapmatch/hmm.hpp"

namespace mapmatch {

/// Every tunable of the matching pipeline, as one flat document. Files and
/// `--set key=value` overrides address fields by the names below; unknown
/// keys are rejected so typos cannot silently fall back to defaults.
struct RunConfig {
  // Emission / transition factors
  double sigma_vehicle = 20.0;
  double sigma_lane = 3.0;
  double gamma = 50.0;
  double eps_heading = 1e-4;
  double eps_transition = 1e-4;
  double candidate_radius = 50.0;
  double path_cap = 300.0;

  // Lane-marking registration
  double f_type = 2.0;
  int icp_max_iterations = 30;
  double icp_convergence_tol = 0.01;     // meters, |delta mean cost| stop
  double icp_max_correspondence = 3.0;   // meters, pairing gate
  double icp_rotation_cap_deg = 10.0;    // cumulative rotation clamp
  bool icp_estimate_rotation = true;

  // Lane enrichment and the lane probability factor
  double lane_sample_interval = 1.0;     // meters along each marking spline
  double association_floor = 0.05;       // minimum stored association prob
  double lane_context_radius = 10.0;     // meters, lanes considered around pose
  double pl_floor = 1e-4;                // relative floor of the lane factor

  // Scenario probability factor
  double scenario_floor = 1e-4;
  int stale_window = 2;                  // steps a scenario message stays valid

  // Map loading
  double snap_tolerance = 0.5;           // meters, endpoint snap for successors

  EmissionParams emission_params() const {
    return EmissionParams{sigma_vehicle, eps_heading, candidate_radius};
  }
  EmissionParams lane_emission_params() const {
    return EmissionParams{sigma_lane, eps_heading, candidate_radius};
  }
  TransitionParams transition_params() const {
    return TransitionParams{gamma, eps_transition, path_cap};
  }
  MatchParams match_params() const {
    return MatchParams{emission_params(), transition_params()};
  }
};

namespace detail {

struct ConfigField {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

inline void expect_number(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) throw InvalidConfig("config key '" + key + "' expects a number");
}

inline const std::map<std::string, ConfigField>& config_fields() {
  auto num = [](double RunConfig::* f) {
    return ConfigField{
        [f](const RunConfig& c) {
          std::ostringstream os;
          os << c.*f;
          return os.str();
        },
        [f](RunConfig& c, const nlohmann::json& v) {
          if (!v.is_number()) throw InvalidConfig("expected a number");
          c.*f = v.get<double>();
        }};
  };
  auto integer = [](int RunConfig::* f) {
    return ConfigField{
        [f](const RunConfig& c) { return std::to_string(c.*f); },
        [f](RunConfig& c, const nlohmann::json& v) {
          if (!v.is_number_integer()) throw InvalidConfig("expected an integer");
          c.*f = v.get<int>();
        }};
  };
  auto boolean = [](bool RunConfig::* f) {
    return ConfigField{
        [f](const RunConfig& c) { return std::string(c.*f ? "true" : "false"); },
        [f](RunConfig& c, const nlohmann::json& v) {
          if (!v.is_boolean()) throw InvalidConfig("expected true or false");
          c.*f = v.get<bool>();
        }};
  };
  static const std::map<std::string, ConfigField> fields = {
      {"sigma_vehicle", num(&RunConfig::sigma_vehicle)},
      {"sigma_lane", num(&RunConfig::sigma_lane)},
      {"gamma", num(&RunConfig::gamma)},
      {"eps_heading", num(&RunConfig::eps_heading)},
      {"eps_transition", num(&RunConfig::eps_transition)},
      {"candidate_radius", num(&RunConfig::candidate_radius)},
      {"path_cap", num(&RunConfig::path_cap)},
      {"f_type", num(&RunConfig::f_type)},
      {"icp_max_iterations", integer(&RunConfig::icp_max_iterations)},
      {"icp_convergence_tol", num(&RunConfig::icp_convergence_tol)},
      {"icp_max_correspondence", num(&RunConfig::icp_max_correspondence)},
      {"icp_rotation_cap_deg", num(&RunConfig::icp_rotation_cap_deg)},
      {"icp_estimate_rotation", boolean(&RunConfig::icp_estimate_rotation)},
      {"lane_sample_interval", num(&RunConfig::lane_sample_interval)},
      {"association_floor", num(&RunConfig::association_floor)},
      {"lane_context_radius", num(&RunConfig::lane_context_radius)},
      {"pl_floor", num(&RunConfig::pl_floor)},
      {"scenario_floor", num(&RunConfig::scenario_floor)},
      {"stale_window", integer(&RunConfig::stale_window)},
      {"snap_tolerance", num(&RunConfig::snap_tolerance)},
  };
  return fields;
}

}  // namespace detail

/// Validates value ranges that would make the pipeline meaningless.
inline void validate_config(const RunConfig& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidConfig(std::string("config key '") + name + "' must be positive");
    }
  };
  positive(c.sigma_vehicle, "sigma_vehicle");
  positive(c.sigma_lane, "sigma_lane");
  positive(c.gamma, "gamma");
  positive(c.eps_heading, "eps_heading");
  positive(c.eps_transition, "eps_transition");
  positive(c.candidate_radius, "candidate_radius");
  positive(c.path_cap, "path_cap");
  positive(c.icp_convergence_tol, "icp_convergence_tol");
  positive(c.icp_max_correspondence, "icp_max_correspondence");
  positive(c.lane_sample_interval, "lane_sample_interval");
  positive(c.lane_context_radius, "lane_context_radius");
  positive(c.pl_floor, "pl_floor");
  positive(c.scenario_floor, "scenario_floor");
  if (c.f_type < 0.0 || !std::isfinite(c.f_type)) {
    throw InvalidConfig("config key 'f_type' must be non-negative");
  }
  if (c.icp_max_iterations < 1) throw InvalidConfig("config key 'icp_max_iterations' must be >= 1");
  if (c.icp_rotation_cap_deg < 0.0) {
    throw InvalidConfig("config key 'icp_rotation_cap_deg' must be non-negative");
  }
  if (c.association_floor < 0.0 || c.association_floor > 1.0) {
    throw InvalidConfig("config key 'association_floor' must be in [0, 1]");
  }
  if (c.stale_window < 0) throw InvalidConfig("config key 'stale_window' must be non-negative");
  if (c.snap_tolerance < 0.0) throw InvalidConfig("config key 'snap_tolerance' must be non-negative");
}

/// Applies a flat JSON object onto `config`. Unknown keys throw InvalidConfig.
inline void apply_config_json(RunConfig& config, const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidConfig("config document must be a flat object");
  const auto& fields = detail::config_fields();
  for (const auto& [key, value] : doc.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw InvalidConfig("unknown config key '" + key + "'");
    try {
      it->second.set(config, value);
    } catch (const InvalidConfig& e) {
      throw InvalidConfig("config key '" + key + "': " + e.what());
    }
  }
  validate_config(config);
}

inline RunConfig config_from_json(const nlohmann::json& doc) {
  RunConfig c;
  apply_config_json(c, doc);
  return c;
}

/// Applies one `key=value` override. Values parse as JSON scalars, so
/// `gamma=35`, `icp_estimate_rotation=false` both work.
inline void apply_set(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw InvalidConfig("override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) {
    throw InvalidConfig("override '" + assignment + "' has an unparseable value");
  }
  apply_config_json(config, nlohmann::json{{key, value}});
}

/// Serializes the full config as a flat JSON object, keys sorted.
inline nlohmann::json config_to_json(const RunConfig& config) {
  nlohmann::json doc = nlohmann::json::object();
  doc["sigma_vehicle"] = config.sigma_vehicle;
  doc["sigma_lane"] = config.sigma_lane;
  doc["gamma"] = config.gamma;
  doc["eps_heading"] = config.eps_heading;
  doc["eps_transition"] = config.eps_transition;
  doc["candidate_radius"] = config.candidate_radius;
  doc["path_cap"] = config.path_cap;
  doc["f_type"] = config.f_type;
  doc["icp_max_iterations"] = config.icp_max_iterations;
  doc["icp_convergence_tol"] = config.icp_convergence_tol;
  doc["icp_max_correspondence"] = config.icp_max_correspondence;
  doc["icp_rotation_cap_deg"] = config.icp_rotation_cap_deg;
  doc["icp_estimate_rotation"] = config.icp_estimate_rotation;
  doc["lane_sample_interval"] = config.lane_sample_interval;
  doc["association_floor"] = config.association_floor;
  doc["lane_context_radius"] = config.lane_context_radius;
  doc["pl_floor"] = config.pl_floor;
  doc["scenario_floor"] = config.scenario_floor;
  doc["stale_window"] = config.stale_window;
  doc["snap_tolerance"] = config.snap_tolerance;
  return doc;
}

}  // namespace mapmatch
