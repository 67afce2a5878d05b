#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "helpers.hpp"

using Catch::Approx;
using nlohmann::json;
using testutil::read_file;
using testutil::run_cli;
using testutil::TempDir;
using testutil::write_file;

namespace {

json parse_file(const std::string& path) { return json::parse(read_file(path)); }

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += (c == '\n');
  return n;
}

/// Generates the small two-block, noise-free straight-drive bundle used by
/// most CLI tests. Returns the bundle directory.
std::string make_small_bundle(const TempDir& dir, const std::string& name, int seed = 3) {
  const std::string bundle = dir.file(name);
  const int rc = run_cli("sim --set n_blocks=2 --set route=straight --set gnss_sigma=0"
                         " --set bias_walk=0 --seed " + std::to_string(seed) +
                         " --out " + bundle);
  REQUIRE(rc == 0);
  return bundle;
}

}  // namespace

TEST_CASE("the simulator writes complete, reproducible bundles") {
  TempDir dir("cli-sim");
  const std::string b1 = make_small_bundle(dir, "one");
  const std::string b2 = make_small_bundle(dir, "two");
  for (const std::string name : {"map.geojson", "lanes.jsonl", "traj.jsonl",
                                 "detections.jsonl", "scenario.jsonl", "truth.jsonl",
                                 "sim_config.json"}) {
    REQUIRE(std::filesystem::exists(b1 + "/" + name));
    CHECK(read_file(b1 + "/" + name) == read_file(b2 + "/" + name));
  }
  const json map = parse_file(b1 + "/map.geojson");
  CHECK(map.at("type") == "FeatureCollection");
  CHECK(map.at("features").size() == 46);
  CHECK(count_lines(read_file(b1 + "/traj.jsonl")) == 21);
  const json cfg = parse_file(b1 + "/sim_config.json");
  CHECK(cfg.at("n_blocks") == 2);
  CHECK(cfg.at("seed") == 3);
}

TEST_CASE("a seed range fans out into per-seed bundles") {
  TempDir dir("cli-seeds");
  const std::string out = dir.file("fan");
  REQUIRE(run_cli("sim --set n_blocks=2 --set route=straight --seeds 4..6 --out " + out) == 0);
  for (int s : {4, 5, 6}) {
    CHECK(std::filesystem::exists(out + "/seed_" + std::to_string(s) + "/traj.jsonl"));
  }
  // A range member is byte-identical to the same seed run singly.
  const std::string single = dir.file("single");
  REQUIRE(run_cli("sim --set n_blocks=2 --set route=straight --seed 5 --out " + single) == 0);
  CHECK(read_file(out + "/seed_5/traj.jsonl") == read_file(single + "/traj.jsonl"));
  CHECK(read_file(out + "/seed_5/map.geojson") == read_file(single + "/map.geojson"));
  // Different seeds share the map but not the noise.
  CHECK(read_file(out + "/seed_4/map.geojson") == read_file(out + "/seed_5/map.geojson"));
  CHECK(read_file(out + "/seed_4/traj.jsonl") != read_file(out + "/seed_5/traj.jsonl"));
}

TEST_CASE("enrich, match, and eval chain into a perfect noise-free run") {
  TempDir dir("cli-chain");
  const std::string bundle = make_small_bundle(dir, "bundle");

  const std::string enriched = dir.file("enriched.json");
  REQUIRE(run_cli("enrich --map " + bundle + "/map.geojson --lanes " + bundle +
                  "/lanes.jsonl --out " + enriched) == 0);
  const json edoc = parse_file(enriched);
  CHECK(edoc.at("format") == "enriched-sd/1");
  CHECK(edoc.at("associations").size() > 0);

  const std::string matches = dir.file("matches.jsonl");
  const std::string overlay = dir.file("overlay.geojson");
  REQUIRE(run_cli("match --enriched " + enriched + " --traj " + bundle +
                  "/traj.jsonl --lanes " + bundle + "/detections.jsonl --scenario " + bundle +
                  "/scenario.jsonl --out " + matches + " --emit-geojson " + overlay) == 0);
  const std::string match_text = read_file(matches);
  CHECK(count_lines(match_text) == 22);  // 21 steps + summary
  CHECK(match_text.find("\"final\":true") != std::string::npos);
  CHECK(parse_file(overlay).at("type") == "FeatureCollection");

  const std::string report_path = dir.file("report.json");
  REQUIRE(run_cli("eval --map " + bundle + "/map.geojson --matches " + matches + " --truth " +
                  bundle + "/truth.jsonl --out " + report_path) == 0);
  const json report = parse_file(report_path);
  CHECK(report.at("match_rate").get<double>() == Approx(1.0));
  CHECK(report.at("f1").get<double>() == Approx(1.0));
  CHECK(report.at("precision").get<double>() == Approx(1.0));
  CHECK(report.at("recall").get<double>() == Approx(1.0));
  CHECK(report.at("n_all") == 21);

  // eval without --out prints the same report to stdout.
  const std::string log = dir.file("eval.log");
  REQUIRE(run_cli("eval --map " + bundle + "/map.geojson --matches " + matches + " --truth " +
                  bundle + "/truth.jsonl", log) == 0);
  CHECK(read_file(log).find("\"match_rate\"") != std::string::npos);
}

TEST_CASE("repeated runs of every stage are byte-identical") {
  TempDir dir("cli-repeat");
  const std::string bundle = make_small_bundle(dir, "bundle");

  const std::string e1 = dir.file("e1.json");
  const std::string e2 = dir.file("e2.json");
  REQUIRE(run_cli("enrich --map " + bundle + "/map.geojson --lanes " + bundle +
                  "/lanes.jsonl --out " + e1) == 0);
  REQUIRE(run_cli("enrich --map " + bundle + "/map.geojson --lanes " + bundle +
                  "/lanes.jsonl --out " + e2) == 0);
  CHECK(read_file(e1) == read_file(e2));

  const std::string m1 = dir.file("m1.jsonl");
  const std::string m2 = dir.file("m2.jsonl");
  const std::string args = " --traj " + bundle + "/traj.jsonl --lanes " + bundle +
                           "/detections.jsonl --scenario " + bundle + "/scenario.jsonl";
  REQUIRE(run_cli("match --enriched " + e1 + args + " --out " + m1) == 0);
  REQUIRE(run_cli("match --enriched " + e1 + args + " --out " + m2) == 0);
  CHECK(read_file(m1) == read_file(m2));

  const std::string c1 = dir.file("c1.json");
  const std::string c2 = dir.file("c2.json");
  REQUIRE(run_cli("config --dump --out " + c1) == 0);
  REQUIRE(run_cli("config --dump --out " + c2) == 0);
  CHECK(read_file(c1) == read_file(c2));
}

TEST_CASE("the enriched map is optional: plain-map matching works") {
  TempDir dir("cli-plain");
  const std::string bundle = make_small_bundle(dir, "bundle");
  const std::string matches = dir.file("matches.jsonl");
  REQUIRE(run_cli("match --map " + bundle + "/map.geojson --traj " + bundle +
                  "/traj.jsonl --out " + matches) == 0);
  CHECK(count_lines(read_file(matches)) == 22);
  // Factor ablation flags are accepted alongside.
  const std::string m2 = dir.file("m2.jsonl");
  REQUIRE(run_cli("match --map " + bundle + "/map.geojson --traj " + bundle +
                  "/traj.jsonl --no-pose-correction --disable-pl --disable-ps --out " + m2) == 0);
  CHECK(count_lines(read_file(m2)) == 22);
}

TEST_CASE("an empty lane file enriches to zero associations and still matches") {
  TempDir dir("cli-nolanes");
  const std::string bundle = make_small_bundle(dir, "bundle");
  const std::string empty = dir.file("empty.jsonl");
  write_file(empty, "");
  const std::string enriched = dir.file("enriched.json");
  REQUIRE(run_cli("enrich --map " + bundle + "/map.geojson --lanes " + empty + " --out " +
                  enriched) == 0);
  const json edoc = parse_file(enriched);
  CHECK(edoc.at("associations").size() == 0);
  CHECK(edoc.at("lanes").size() == 0);
  const std::string matches = dir.file("matches.jsonl");
  REQUIRE(run_cli("match --enriched " + enriched + " --traj " + bundle + "/traj.jsonl --out " +
                  matches) == 0);
  CHECK(count_lines(read_file(matches)) == 22);
}

TEST_CASE("config --dump reports the effective configuration") {
  TempDir dir("cli-config");
  const std::string out = dir.file("cfg.json");
  REQUIRE(run_cli("config --dump --out " + out) == 0);
  const json cfg = parse_file(out);
  CHECK(cfg.size() == 20);
  CHECK(cfg.at("gamma").get<double>() == Approx(50.0));
  CHECK(cfg.at("sigma_vehicle").get<double>() == Approx(20.0));

  const std::string out2 = dir.file("cfg2.json");
  REQUIRE(run_cli("config --dump --set gamma=35 --out " + out2) == 0);
  CHECK(parse_file(out2).at("gamma").get<double>() == Approx(35.0));

  // A config file plus overrides layer in order.
  const std::string base = dir.file("base.json");
  write_file(base, "{\"gamma\": 30, \"sigma_vehicle\": 10}\n");
  const std::string out3 = dir.file("cfg3.json");
  REQUIRE(run_cli("config --dump --config " + base + " --set gamma=42 --out " + out3) == 0);
  const json cfg3 = parse_file(out3);
  CHECK(cfg3.at("gamma").get<double>() == Approx(42.0));
  CHECK(cfg3.at("sigma_vehicle").get<double>() == Approx(10.0));
}

TEST_CASE("input and usage failures exit with code 2") {
  TempDir dir("cli-exit2");
  const std::string bundle = make_small_bundle(dir, "bundle");
  CHECK(run_cli("warble") == 2);
  CHECK(run_cli("match --traj nope.jsonl") == 2);  // missing required --out
  CHECK(run_cli("match --traj " + bundle + "/traj.jsonl --out " + dir.file("x.jsonl")) ==
        2);  // neither --map nor --enriched
  CHECK(run_cli("match --map " + bundle + "/map.geojson --enriched also.json --traj " + bundle +
                "/traj.jsonl --out " + dir.file("x.jsonl")) == 2);  // both maps
  CHECK(run_cli("match --map " + dir.file("missing.geojson") + " --traj " + bundle +
                "/traj.jsonl --out " + dir.file("x.jsonl")) == 2);
  CHECK(run_cli("match --map " + bundle + "/map.geojson --traj " + bundle +
                "/traj.jsonl --set gama=1 --out " + dir.file("x.jsonl")) == 2);
  CHECK(run_cli("sim --seeds 6..4 --out " + dir.file("fan")) == 2);
  CHECK(run_cli("sim --set n_blocks=0 --out " + dir.file("s")) == 2);
  CHECK(run_cli("config") == 2);  // nothing to do without --dump
}

TEST_CASE("a trajectory with no candidates anywhere exits with code 3") {
  TempDir dir("cli-exit3");
  const std::string bundle = make_small_bundle(dir, "bundle");
  const std::string off = dir.file("off.jsonl");
  write_file(off, "{\"t\": 0, \"x\": 99999, \"y\": 99999}\n"
                  "{\"t\": 1, \"x\": 99999, \"y\": 99984}\n");
  CHECK(run_cli("match --map " + bundle + "/map.geojson --traj " + off + " --out " +
                dir.file("m.jsonl")) == 3);
}

TEST_CASE("evaluation length mismatches exit with code 4") {
  TempDir dir("cli-exit4");
  const std::string bundle = make_small_bundle(dir, "bundle");
  const std::string matches = dir.file("matches.jsonl");
  REQUIRE(run_cli("match --map " + bundle + "/map.geojson --traj " + bundle +
                  "/traj.jsonl --out " + matches) == 0);

  // Drop the last truth line.
  const std::string truth = read_file(bundle + "/truth.jsonl");
  const auto cut = truth.rfind('\n', truth.size() - 2);
  const std::string truncated = dir.file("truth.jsonl");
  write_file(truncated, truth.substr(0, cut + 1));
  CHECK(run_cli("eval --map " + bundle + "/map.geojson --matches " + matches + " --truth " +
                truncated) == 4);

  // An empty record file cannot be scored either.
  const std::string none = dir.file("none.jsonl");
  write_file(none, "");
  CHECK(run_cli("eval --map " + bundle + "/map.geojson --matches " + none + " --truth " +
                bundle + "/truth.jsonl") == 4);
}

TEST_CASE("a one-block network flows through the whole toolchain") {
  TempDir dir("cli-tiny");
  const std::string bundle = dir.file("bundle");
  REQUIRE(run_cli("sim --set n_blocks=1 --set route=straight --seed 7 --out " + bundle) == 0);
  const std::string matches = dir.file("matches.jsonl");
  REQUIRE(run_cli("match --map " + bundle + "/map.geojson --traj " + bundle +
                  "/traj.jsonl --scenario " + bundle + "/scenario.jsonl --out " + matches) == 0);
  REQUIRE(run_cli("eval --map " + bundle + "/map.geojson --matches " + matches + " --truth " +
                  bundle + "/truth.jsonl --out " + dir.file("report.json")) == 0);
  CHECK(parse_file(dir.file("report.json")).at("n_all") == 11);
  // Routes the tiny network cannot host are an input error.
  CHECK(run_cli("sim --set n_blocks=1 --set route=tour --out " + dir.file("t")) == 2);
}
