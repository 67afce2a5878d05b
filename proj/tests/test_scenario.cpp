#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>

#include "mapmatch/scenario.hpp"
#include "helpers.hpp"

using namespace mapmatch;
using Catch::Approx;

TEST_CASE("the scenario factor is the recognizer's class log-probability") {
  const ScenarioProbs probs{0.0, 0.1, 0.85, 0.05};
  CHECK(scenario_emission(probs, RoadClass::Expressway) == Approx(std::log(0.85)));
  CHECK(scenario_emission(probs, RoadClass::Ordinary) == Approx(std::log(0.1)));
  CHECK(scenario_emission(probs, RoadClass::Tunnel) == Approx(std::log(0.05)));
}

TEST_CASE("the floor keeps the scenario factor finite") {
  const ScenarioProbs probs{0.0, 1.0, 0.0, 0.0};
  CHECK(scenario_emission(probs, RoadClass::Expressway, 1e-4) == Approx(std::log(1e-4)));
  CHECK(scenario_emission(probs, RoadClass::Tunnel, 1e-3) == Approx(std::log(1e-3)));
  CHECK(std::isfinite(scenario_emission(probs, RoadClass::Expressway, 1e-4)));
}

TEST_CASE("flooring inflates the total mass by at most three floors") {
  for (const ScenarioProbs probs : {ScenarioProbs{0, 1.0, 0.0, 0.0},
                                    ScenarioProbs{0, 0.2, 0.3, 0.5},
                                    ScenarioProbs::uniform()}) {
    const double mass = std::exp(scenario_emission(probs, RoadClass::Ordinary)) +
                        std::exp(scenario_emission(probs, RoadClass::Expressway)) +
                        std::exp(scenario_emission(probs, RoadClass::Tunnel));
    CHECK(mass >= 1.0 - 1e-12);
    CHECK(mass <= 1.0 + 3e-4 + 1e-12);
  }
}

TEST_CASE("uniform probabilities carry a third per class") {
  const ScenarioProbs u = ScenarioProbs::uniform(7.5);
  CHECK(u.t == Approx(7.5));
  CHECK(u.p_ordinary == Approx(1.0 / 3.0));
  CHECK(u.p_express == Approx(1.0 / 3.0));
  CHECK(u.p_tunnel == Approx(1.0 / 3.0));
}

TEST_CASE("scenario files load, normalize and validate") {
  testutil::TempDir dir("scenario");
  const std::string path = dir.file("scenario.jsonl");
  testutil::write_file(path,
                       R"({"t": 0.0, "ordinary": 0.8, "express": 0.1, "tunnel": 0.1}
{"t": 1.0, "ordinary": 0.25, "express": 0.5, "tunnel": 0.25}

{"t": 2.0, "ordinary": 0.1, "express": 0.3, "tunnel": 0.1}
)");
  const ScenarioStream stream = ScenarioStream::load(path, 2.0);
  REQUIRE(stream.size() == 3);
  CHECK(stream.stale_window() == Approx(2.0));
  CHECK(stream.lookup(1.0).p_express == Approx(0.5));
  // The third record arrives unnormalized and is rescaled to sum to one.
  const ScenarioProbs at2 = stream.lookup(2.0);
  CHECK(at2.p_ordinary == Approx(0.2));
  CHECK(at2.p_express == Approx(0.6));
  CHECK(at2.p_tunnel == Approx(0.2));
}

TEST_CASE("scenario file errors carry line numbers") {
  testutil::TempDir dir("scenario-bad");
  SECTION("invalid JSON") {
    const std::string path = dir.file("a.jsonl");
    testutil::write_file(path, "{\"t\":0,\"ordinary\":1,\"express\":0,\"tunnel\":0}\nnope\n");
    try {
      ScenarioStream::load(path);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SECTION("probability out of range") {
    const std::string path = dir.file("b.jsonl");
    testutil::write_file(path, "{\"t\":0,\"ordinary\":1.2,\"express\":0,\"tunnel\":0}\n");
    CHECK_THROWS_AS(ScenarioStream::load(path), ParseError);
  }
  SECTION("zero total mass") {
    const std::string path = dir.file("c.jsonl");
    testutil::write_file(path, "{\"t\":0,\"ordinary\":0,\"express\":0,\"tunnel\":0}\n");
    CHECK_THROWS_AS(ScenarioStream::load(path), ParseError);
  }
  SECTION("non-increasing timestamps") {
    const std::string path = dir.file("d.jsonl");
    testutil::write_file(path,
                         "{\"t\":1,\"ordinary\":1,\"express\":0,\"tunnel\":0}\n"
                         "{\"t\":1,\"ordinary\":1,\"express\":0,\"tunnel\":0}\n");
    CHECK_THROWS_AS(ScenarioStream::load(path), ParseError);
  }
  SECTION("missing field") {
    const std::string path = dir.file("e.jsonl");
    testutil::write_file(path, "{\"t\":0,\"ordinary\":1,\"express\":0}\n");
    CHECK_THROWS_AS(ScenarioStream::load(path), ParseError);
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(ScenarioStream::load(dir.file("nope.jsonl")), ParseError);
  }
}

TEST_CASE("lookup picks the nearest record and prefers the earlier tie") {
  std::vector<ScenarioProbs> records;
  records.push_back(ScenarioProbs{0.0, 0.8, 0.1, 0.1});
  records.push_back(ScenarioProbs{2.0, 0.1, 0.8, 0.1});
  records.push_back(ScenarioProbs{4.0, 0.1, 0.1, 0.8});
  const ScenarioStream stream(records, 2.0);

  CHECK(stream.lookup(0.4).p_ordinary == Approx(0.8));
  CHECK(stream.lookup(1.6).p_express == Approx(0.8));
  CHECK(stream.lookup(3.9).p_tunnel == Approx(0.8));
  // Exactly between two records: the earlier one wins.
  CHECK(stream.lookup(1.0).p_ordinary == Approx(0.8));
  CHECK(stream.lookup(3.0).p_express == Approx(0.8));
  // Before the first and after the last record, within the window.
  CHECK(stream.lookup(-1.0).p_ordinary == Approx(0.8));
  CHECK(stream.lookup(5.5).p_tunnel == Approx(0.8));
}

TEST_CASE("queries beyond the stale window degrade to uniform") {
  std::vector<ScenarioProbs> records{ScenarioProbs{10.0, 0.8, 0.1, 0.1}};
  const ScenarioStream stream(records, 2.0);
  CHECK(stream.lookup(12.0).p_ordinary == Approx(0.8));  // exactly at the edge
  const ScenarioProbs stale = stream.lookup(12.5);
  CHECK(stale.p_ordinary == Approx(1.0 / 3.0));
  CHECK(stale.p_express == Approx(1.0 / 3.0));
  CHECK(stale.t == Approx(12.5));
  // An empty stream is always uniform.
  const ScenarioStream none;
  CHECK(none.empty());
  CHECK(none.lookup(0.0).p_tunnel == Approx(1.0 / 3.0));
}
