// mapmatch: command-line surface over the map-matching library.
//
// Subcommands:
//   enrich  Associate lane markings with an SD map -> enriched-sd/1 JSON.
//   match   Run the fused online matcher over a trajectory.
//   eval    Score finalized match records against ground truth.
//   sim     Generate synthetic multilevel benchmark bundles.
//   config  Inspect the matching configuration.
//
// Exit codes: 0 ok, 2 input error, 3 empty lattice (no candidates at any
// step), 4 evaluation mismatch, 1 unexpected failure.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "mapmatch/config.hpp"
#include "mapmatch/errors.hpp"
#include "mapmatch/lane_markings.hpp"
#include "mapmatch/metrics.hpp"
#include "mapmatch/pipeline.hpp"
#include "mapmatch/road_graph.hpp"
#include "mapmatch/simulator.hpp"

namespace {

using namespace mapmatch;

constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitInput = 2;
constexpr int kExitEmptyLattice = 3;
constexpr int kExitEvalMismatch = 4;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("invalid JSON in '" + path + "': " + e.what());
  }
  return doc;
}

void write_text_file(const std::string& path, const std::string& text) {
  if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out << text;
}

RunConfig make_run_config(const std::string& config_path, const std::vector<std::string>& sets) {
  RunConfig cfg;
  if (!config_path.empty()) apply_config_json(cfg, read_json_file(config_path));
  for (const auto& s : sets) apply_set(cfg, s);
  validate_config(cfg);
  return cfg;
}

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_config_opts(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Config file (flat JSON object)");
  cmd->add_option("--set", opts.sets, "Override one key, e.g. --set gamma=35 (repeatable)");
}

// ---------------------------------------------------------------------------
// enrich
// ---------------------------------------------------------------------------

int cmd_enrich(const std::string& map_path, const std::string& lanes_path,
               const CommonOpts& copts, const std::string& out_path) {
  const RunConfig cfg = make_run_config(copts.config_path, copts.sets);
  RoadGraph graph = RoadGraph::load_geojson(map_path, cfg.snap_tolerance);
  std::vector<LaneMarking> lanes = load_lanes_jsonl(lanes_path, cfg.lane_sample_interval);
  EnrichedMap em = build_enriched_map(
      std::move(graph), std::move(lanes),
      MatchParams{cfg.lane_emission_params(), cfg.transition_params()}, cfg.association_floor);
  write_text_file(out_path, enriched_to_json(em).dump(2) + "\n");
  std::fprintf(stderr, "enriched: %zu lanes, %zu associations\n", em.lanes.size(),
               em.associations.size());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// match
// ---------------------------------------------------------------------------

struct MatchInputs {
  std::string map_path, enriched_path, traj_path, lanes_path, scenario_path;
  std::string out_path, geojson_path;
  bool no_pose_correction = false, disable_pl = false, disable_ps = false;
};

int cmd_match(const MatchInputs& in, const CommonOpts& copts) {
  const RunConfig cfg = make_run_config(copts.config_path, copts.sets);
  if (in.map_path.empty() == in.enriched_path.empty()) {
    throw ParseError("exactly one of --map or --enriched is required");
  }

  std::optional<EnrichedMap> enriched;
  std::optional<RoadGraph> graph;
  if (!in.enriched_path.empty()) {
    enriched = enriched_from_json(read_json_file(in.enriched_path));
  } else {
    graph = RoadGraph::load_geojson(in.map_path, cfg.snap_tolerance);
  }
  const RoadGraph& g = enriched ? enriched->graph : *graph;

  SessionOptions options;
  options.use_pose_correction = !in.no_pose_correction;
  options.use_lane_factor = !in.disable_pl;
  options.use_scenario_factor = !in.disable_ps;

  std::vector<Observation> observations = load_trajectory(in.traj_path, g);
  std::vector<std::pair<double, std::vector<TypedPoint>>> detections;
  if (!in.lanes_path.empty()) detections = load_detections(in.lanes_path);
  ScenarioStream scenario;
  if (!in.scenario_path.empty()) {
    scenario = ScenarioStream::load(in.scenario_path, cfg.stale_window);
  }

  MatchSession session = enriched ? MatchSession(*enriched, cfg, options)
                                  : MatchSession(*graph, cfg, options);
  for (auto& obs : observations) {
    if (!in.lanes_path.empty()) obs.detections = detections_at(detections, obs.t);
    if (!in.scenario_path.empty()) obs.scenario = scenario.lookup(obs.t);
    session.match_step(obs);
  }

  std::vector<MatchRecord> records = session.finalize();
  if (!session.ever_had_candidates()) {
    throw EmptyLattice("no observation had any candidate road");
  }

  std::ostringstream body;
  save_match_records(records, body);
  write_text_file(in.out_path, body.str());
  if (!in.geojson_path.empty()) {
    write_text_file(in.geojson_path, match_overlay_geojson(records, g).dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& map_path, const std::string& matches_path,
             const std::string& truth_path, const CommonOpts& copts,
             const std::string& out_path) {
  const RunConfig cfg = make_run_config(copts.config_path, copts.sets);
  const RoadGraph graph = RoadGraph::load_geojson(map_path, cfg.snap_tolerance);
  const std::vector<MatchRecord> records = load_match_records(matches_path);
  const std::vector<std::pair<double, RoadId>> truth = load_truth(truth_path);

  std::vector<PointXY> positions;
  std::vector<std::optional<RoadId>> pred;
  std::vector<RoadId> truth_roads;
  for (const auto& r : records) {
    positions.push_back(r.corrected_pose.position);
    pred.push_back(r.road);
  }
  for (const auto& [t, id] : truth) truth_roads.push_back(id);

  const EvalReport report = evaluate(graph, positions, pred, truth_roads);
  const std::string text = report.to_json().dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text_file(out_path, text);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sim
// ---------------------------------------------------------------------------

struct SeedRange {
  uint64_t first = 0, last = 0;  // inclusive
};

SeedRange parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  SeedRange r;
  try {
    if (dots == std::string::npos) {
      r.first = r.last = std::stoull(text);
    } else {
      r.first = std::stoull(text.substr(0, dots));
      r.last = std::stoull(text.substr(dots + 2));
    }
  } catch (const std::exception&) {
    throw InvalidConfig("--seeds expects N or A..B, got '" + text + "'");
  }
  if (r.last < r.first) throw InvalidConfig("--seeds range is empty: '" + text + "'");
  return r;
}

void run_one_sim(SimConfig cfg, const std::string& out_dir) {
  const NetworkBundle network = generate_network(cfg);
  const std::vector<RoadId> route = build_route(network, route_kind_from_string(cfg.route));
  const DriveResult drive = simulate_drive(network, route, cfg);
  write_simulation_bundle(network, drive, out_dir, &cfg);
}

int cmd_sim(const std::string& config_path, const std::vector<std::string>& sets,
            std::optional<uint64_t> seed, const std::string& seeds_text,
            const std::string& out_dir) {
  SimConfig cfg;
  if (!config_path.empty()) apply_sim_config_json(cfg, read_json_file(config_path));
  for (const auto& s : sets) apply_sim_set(cfg, s);
  if (seed) cfg.seed = *seed;
  cfg.validate();

  if (seeds_text.empty()) {
    run_one_sim(cfg, out_dir);
    return kExitOk;
  }

  // Fan a seed range out across worker threads, one subdirectory per seed.
  const SeedRange range = parse_seed_range(seeds_text);
  std::vector<SimConfig> jobs;
  for (uint64_t s = range.first; s <= range.last; ++s) {
    jobs.push_back(cfg);
    jobs.back().seed = s;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> workers;
  std::mutex error_mutex;
  std::vector<std::string> errors;
  const size_t n_workers = std::min<size_t>(jobs.size(), std::thread::hardware_concurrency() > 0
                                                             ? std::thread::hardware_concurrency()
                                                             : 4);
  for (size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&]() {
      for (size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
        try {
          run_one_sim(jobs[i],
                      (std::filesystem::path(out_dir) /
                       ("seed_" + std::to_string(jobs[i].seed)))
                          .string());
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(error_mutex);
          errors.push_back("seed " + std::to_string(jobs[i].seed) + ": " + e.what());
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (!errors.empty()) {
    for (const auto& e : errors) std::fprintf(stderr, "error: %s\n", e.c_str());
    throw InvalidConfig("simulation failed for " + std::to_string(errors.size()) + " seed(s)");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

int cmd_config(bool dump, const CommonOpts& copts, const std::string& out_path) {
  const RunConfig cfg = make_run_config(copts.config_path, copts.sets);
  if (!dump) throw InvalidConfig("config: nothing to do (pass --dump)");
  const std::string text = config_to_json(cfg).dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text_file(out_path, text);
  }
  return kExitOk;
}

int dispatch_error(const Error& e) {
  std::fprintf(stderr, "error: %s\n", e.what());
  if (dynamic_cast<const EmptyLattice*>(&e)) return kExitEmptyLattice;
  if (dynamic_cast<const LengthMismatch*>(&e) || dynamic_cast<const DegenerateEval*>(&e)) {
    return kExitEvalMismatch;
  }
  return kExitInput;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lane-enriched SD map matching toolkit"};
  app.require_subcommand(1);

  // enrich
  auto* enrich = app.add_subcommand("enrich", "Associate lane markings with an SD map");
  std::string enrich_map, enrich_lanes, enrich_out;
  CommonOpts enrich_copts;
  enrich->add_option("--map", enrich_map, "SD map GeoJSON")->required();
  enrich->add_option("--lanes", enrich_lanes, "Lane markings JSONL")->required();
  enrich->add_option("--out", enrich_out, "Output enriched map JSON")->required();
  add_config_opts(enrich, enrich_copts);

  // match
  auto* match = app.add_subcommand("match", "Match a trajectory against a map");
  MatchInputs match_in;
  CommonOpts match_copts;
  match->add_option("--map", match_in.map_path, "SD map GeoJSON (baseline matching)");
  match->add_option("--enriched", match_in.enriched_path, "Enriched map JSON");
  match->add_option("--traj", match_in.traj_path, "Trajectory JSONL")->required();
  match->add_option("--lanes", match_in.lanes_path, "Vehicle-frame lane detections JSONL");
  match->add_option("--scenario", match_in.scenario_path, "Scenario probabilities JSONL");
  match->add_option("--out", match_in.out_path, "Output match records JSONL")->required();
  match->add_option("--emit-geojson", match_in.geojson_path, "Also write a GeoJSON overlay");
  match->add_flag("--no-pose-correction", match_in.no_pose_correction,
                  "Disable registration-based pose correction");
  match->add_flag("--disable-pl", match_in.disable_pl, "Disable the lane probability factor");
  match->add_flag("--disable-ps", match_in.disable_ps, "Disable the scenario probability factor");
  add_config_opts(match, match_copts);

  // eval
  auto* eval = app.add_subcommand("eval", "Score match records against ground truth");
  std::string eval_map, eval_matches, eval_truth, eval_out;
  CommonOpts eval_copts;
  eval->add_option("--map", eval_map, "SD map GeoJSON")->required();
  eval->add_option("--matches", eval_matches, "Finalized match records JSONL")->required();
  eval->add_option("--truth", eval_truth, "Ground-truth JSONL")->required();
  eval->add_option("--out", eval_out, "Output report JSON (default: stdout)");
  add_config_opts(eval, eval_copts);

  // sim
  auto* sim = app.add_subcommand("sim", "Generate a synthetic benchmark bundle");
  std::string sim_config_path, sim_seeds, sim_out;
  std::vector<std::string> sim_sets;
  std::optional<uint64_t> sim_seed;
  sim->add_option("--config", sim_config_path, "Sim config file (flat JSON object)");
  sim->add_option("--set", sim_sets, "Override one sim key, e.g. --set route=ramp (repeatable)");
  sim->add_option("--seed", sim_seed, "Seed for a single bundle");
  sim->add_option("--seeds", sim_seeds, "Seed range A..B; writes seed_<k>/ per seed");
  sim->add_option("--out", sim_out, "Output directory")->required();

  // config
  auto* config = app.add_subcommand("config", "Inspect the matching configuration");
  bool config_dump = false;
  std::string config_out;
  CommonOpts config_copts;
  config->add_flag("--dump", config_dump, "Print the effective config as JSON");
  config->add_option("--out", config_out, "Write the config to a file instead of stdout");
  add_config_opts(config, config_copts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (enrich->parsed()) return cmd_enrich(enrich_map, enrich_lanes, enrich_copts, enrich_out);
    if (match->parsed()) return cmd_match(match_in, match_copts);
    if (eval->parsed()) return cmd_eval(eval_map, eval_matches, eval_truth, eval_copts, eval_out);
    if (sim->parsed()) return cmd_sim(sim_config_path, sim_sets, sim_seed, sim_seeds, sim_out);
    if (config->parsed()) return cmd_config(config_dump, config_copts, config_out);
  } catch (const Error& e) {
    return dispatch_error(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return kExitUnexpected;
  }
  return kExitUnexpected;
}
