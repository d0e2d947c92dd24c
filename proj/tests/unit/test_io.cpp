#include <catch_amalgamated.hpp>

#include <sstream>

#include "droopstab/droopstab.hpp"
#include "droopstab/io.hpp"

using namespace droopstab;
using io::json;
using Catch::Matchers::WithinAbs;

TEST_CASE("single-inverter block with defaults and overrides", "[io]") {
  const auto cfg = json::parse(R"({
    "system": {"type": "single-inverter", "chi": 0.15, "Pd": 1.25},
    "set": {"single.B": 2.0}
  })");
  const auto sys = io::parse_system(cfg);
  REQUIRE(sys.kind() == SystemKind::single_inverter);
  const auto& p = sys.single_params();
  CHECK(p.chi == 0.15);
  CHECK(p.Pd == 1.25);
  CHECK(p.Qd == 0.05);
  CHECK(p.B == 2.0);
  CHECK(p.tau == 0.1);
}

TEST_CASE("built-in topologies take P, B and controller defaults", "[io]") {
  const auto sys = io::parse_system(json::parse(
      R"({"system": {"type": "tree", "P": 0.2, "B": 3.0, "chi": 0.25}})"));
  const auto m = sys.materialize();
  REQUIRE(m.size() == 10);
  REQUIRE(m.slack.has_value());
  CHECK(m.slack->node == 0);
  CHECK(m.params.chi.isConstant(0.25));
  CHECK(m.params.Pd(4) == 0.2);
  CHECK_THAT(m.params.Pd(0), WithinAbs(-0.3, 1e-15));
  CHECK(m.net.susceptance()(0, 1) == 3.0);
}

TEST_CASE("network shorthand with per-node parameters and slack", "[io]") {
  const auto cfg = json::parse(R"({
    "network": {"nodes": 3, "lines": [{"from": 0, "to": 1, "b": 2.0}, {"from": 1, "to": 2, "b": 1.0}],
                "shunts": [{"node": 2, "b": 0.1}]},
    "params": {"chi": 0.2, "Pd": [0.3, -0.1, -0.2]},
    "slack": {"node": 2, "E": 1.05}
  })");
  const auto m = io::parse_system(cfg).materialize();
  CHECK(m.size() == 3);
  CHECK(m.params.chi.isConstant(0.2));
  CHECK(m.params.Pd(0) == 0.3);
  CHECK(m.params.Qd.isConstant(0.05));
  REQUIRE(m.slack.has_value());
  CHECK(m.slack->node == 2);
  CHECK(m.slack->voltage == 1.05);
  CHECK_THAT(m.net.susceptance()(2, 2), WithinAbs(0.1 - 1.0, 1e-15));
}

TEST_CASE("invalid configurations are rejected", "[io]") {
  const char* bad[] = {
      R"({})",
      R"({"system": {"type": "ring"}})",
      R"({"system": {"type": "single-inverter", "chi": "big"}})",
      R"({"system": {"type": "single-inverter", "B": -1.0}})",
      R"({"system": {"type": "single-inverter"}, "set": {"single.nope": 1.0}})",
      R"({"network": {"nodes": 2, "lines": [{"from": 0, "to": 5, "b": 1.0}]}})",
      R"({"network": {"nodes": 2, "lines": [{"from": 0, "to": 1}]}})",
      R"({"network": {"nodes": 2, "lines": [{"from": 0, "to": 1, "b": 1.0}]}, "params": {"Pd": [1, 2, 3]}})",
      R"({"network": {"nodes": 0}})",
  };
  for (const char* text : bad) {
    INFO(text);
    CHECK_THROWS_AS(io::parse_system(json::parse(text)), InvalidModel);
  }
}

TEST_CASE("sweep, schedule and tolerance blocks", "[io]") {
  const auto cfg = json::parse(R"({
    "system": {"type": "single-inverter"},
    "sweep": {"x": {"path": "single.Qd", "min": 0, "max": 1, "count": 5},
              "y": {"path": "single.Pd", "min": 0, "max": 3, "count": 7},
              "evaluators": ["fixed-point", "eigen"]},
    "t_end": 20, "events": [{"t": 5, "path": "single.chi", "value": 0.2}],
    "rtol": 1e-7
  })");
  const auto spec = io::parse_sweep(cfg, 9);
  CHECK(spec.x.count == 5);
  CHECK(spec.y.path == "single.Pd");
  CHECK_FALSE(spec.criteria);
  CHECK(spec.seed == 9);
  const auto s = io::parse_schedule(cfg);
  CHECK(s.t_end == 20.0);
  REQUIRE(s.events.size() == 1);
  CHECK(s.events[0].path == "single.chi");
  CHECK(io::parse_tolerances(cfg).rtol == 1e-7);

  auto broken = cfg;
  broken["sweep"]["x"]["count"] = 1.5;
  CHECK_THROWS_AS(io::parse_sweep(broken, 0), io::ConfigError);
  broken = cfg;
  broken["sweep"]["evaluators"] = json::array({"cor9"});
  CHECK_THROWS_AS(io::parse_sweep(broken, 0), io::ConfigError);
  broken = cfg;
  broken["events"][0].erase("value");
  CHECK_THROWS_AS(io::parse_schedule(broken), io::ConfigError);
}

TEST_CASE("equilibrium and stability JSON", "[io]") {
  SingleInverterParams q;
  q.Pd = 0.5;
  const auto eqs = single_inverter_equilibria(q);
  REQUIRE_FALSE(eqs.empty());
  const json j = io::to_json(eqs.front());
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"delta", "E", "residual_norm", "method", "slack"});
  CHECK(j["method"] == "analytic-quartic");
  CHECK(j["slack"] == 1);
  CHECK(j["E"].size() == 2);

  const auto rep = eigen_stability(build_linearization(eqs.front(), q.to_model()));
  const json s = io::to_json(rep);
  CHECK(s["eigenvalues"].size() == 3);
  CHECK(s["dominant"].size() == 2);
  CHECK(s["verdict"].is_string());
}

TEST_CASE("non-finite numbers become null in JSON", "[io]") {
  Vector v(2);
  v << 1.0, std::nan("");
  const json j = io::to_json(v);
  CHECK(j[0] == 1.0);
  CHECK(j[1].is_null());
}

TEST_CASE("stability map JSON", "[io]") {
  SweepSpec s;
  s.system = System::single({});
  s.x = {"single.Qd", 0.0, 0.1, 2};
  s.y = {"single.Pd", 0.0, 20.0, 2};
  s.criteria = true;
  const json j = io::to_json(sweep(s));
  CHECK(j["x_axis"]["path"] == "single.Qd");
  CHECK(j["y_axis"]["count"] == 2);
  REQUIRE(j["cells"].size() == 4);
  const auto& ok = j["cells"][0];
  CHECK(ok["status"] == "ok");
  CHECK(ok["verdicts"].contains("cor4"));
  const auto& none = j["cells"][3];
  CHECK(none["status"] == "no-fixed-point");
  CHECK(none["delta_star"].is_null());
  CHECK(none["n_stable"] == 0);
}

TEST_CASE("trajectory CSV header and rows", "[io]") {
  Trajectory tr;
  tr.times = {0.0, 0.5};
  tr.states = {SystemState::flat(2), SystemState::flat(2)};
  tr.residuals = {0.0, 0.0};
  std::ostringstream os;
  io::write_trajectory_csv(os, tr);
  const auto text = os.str();
  CHECK(text.rfind("t,delta_0,delta_1,omega_0,omega_1,E_0,E_1\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
