#pragma once

// JSON configuration parsing and JSON/CSV serialization.  Requires
// nlohmann/json (as json.hpp) on the include path.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "droopstab/simulator.hpp"
#include "droopstab/sweep.hpp"

namespace droopstab::io {

using json = nlohmann::ordered_json;

class ConfigError : public InvalidModel {
 public:
  using InvalidModel::InvalidModel;
};

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number_or_null(v(i)));
  return a;
}

// ---------------------------------------------------------------- parsing

inline json load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

inline double get_number(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
  return j.at(key).get<double>();
}

inline double require_number(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing required key '") + key + "'");
  return get_number(j, key, 0.0);
}

/// Network description: {nodes, lines: [{from, to, b, g?}], shunts: [{node, b, g?}], lossless}.
inline GridNetwork parse_network(const json& j) {
  if (!j.is_object()) throw ConfigError("'network' must be an object");
  if (!j.contains("nodes") || !j.at("nodes").is_number_integer() || j.at("nodes").get<long>() < 1)
    throw ConfigError("'network.nodes' must be a positive integer");
  const auto n = j.at("nodes").get<std::size_t>();
  const bool lossless = j.value("lossless", true);
  std::vector<Coupling> lines;
  for (const auto& l : j.value("lines", json::array())) {
    if (!l.contains("from") || !l.contains("to")) throw ConfigError("line needs 'from' and 'to'");
    lines.push_back({l.at("from").get<std::size_t>(), l.at("to").get<std::size_t>(),
                     require_number(l, "b"), get_number(l, "g", 0.0)});
  }
  std::vector<Shunt> shunts;
  for (const auto& s : j.value("shunts", json::array())) {
    if (!s.contains("node")) throw ConfigError("shunt needs 'node'");
    shunts.push_back({s.at("node").get<std::size_t>(), get_number(s, "b", 0.0), get_number(s, "g", 0.0)});
  }
  return build_network(n, lines, shunts, lossless);
}

inline Vector parse_node_values(const json& j, const char* key, std::size_t n, double fallback) {
  const auto N = static_cast<Eigen::Index>(n);
  if (!j.contains(key)) return Vector::Constant(N, fallback);
  const json& v = j.at(key);
  if (v.is_number()) return Vector::Constant(N, v.get<double>());
  if (!v.is_array() || v.size() != n)
    throw ConfigError(std::string("'") + key + "' must be a number or an array of length " +
                      std::to_string(n));
  Vector out(N);
  for (std::size_t i = 0; i < n; ++i) out(static_cast<Eigen::Index>(i)) = v.at(i).get<double>();
  return out;
}

/// Per-node controller parameters; scalars broadcast.  Defaults follow the
/// built-in systems (tau 0.1, kappa 1, chi 0.5, Pd 0, Qd 0.05, Ed 1).
inline InverterParams parse_params(const json& j, std::size_t n) {
  const json p = j.is_null() ? json::object() : j;
  if (!p.is_object()) throw ConfigError("'params' must be an object");
  InverterParams out{parse_node_values(p, "tau", n, 0.1),   parse_node_values(p, "kappa", n, 1.0),
                     parse_node_values(p, "chi", n, 0.5),   parse_node_values(p, "Pd", n, 0.0),
                     parse_node_values(p, "Qd", n, 0.05),   parse_node_values(p, "Ed", n, 1.0),
                     get_number(p, "omega_d", 0.0)};
  return out;
}

inline ControllerDefaults parse_defaults(const json& j) {
  ControllerDefaults c;
  c.tau = get_number(j, "tau", c.tau);
  c.kappa = get_number(j, "kappa", c.kappa);
  c.chi = get_number(j, "chi", c.chi);
  c.Qd = get_number(j, "Qd", c.Qd);
  c.Ed = get_number(j, "Ed", c.Ed);
  c.omega_d = get_number(j, "omega_d", c.omega_d);
  return c;
}

/// The "system" block, or a top-level {network, params, slack} shorthand.
inline System parse_system(const json& cfg) {
  json s;
  if (cfg.contains("system")) s = cfg.at("system");
  else if (cfg.contains("network")) s = json{{"type", "network"}};
  else throw ConfigError("config needs a 'system' block or a 'network'");
  if (!s.is_object() || !s.contains("type") || !s.at("type").is_string())
    throw ConfigError("'system.type' must be a string");
  const std::string type = s.at("type").get<std::string>();

  auto from = [&](const char* key) -> const json& {
    return s.contains(key) ? s.at(key) : cfg.at(key);
  };
  auto has = [&](const char* key) { return s.contains(key) || cfg.contains(key); };

  System sys = System::single({});
  if (type == "single-inverter") {
    SingleInverterParams p;
    p.tau = get_number(s, "tau", p.tau);
    p.kappa = get_number(s, "kappa", p.kappa);
    p.chi = get_number(s, "chi", p.chi);
    p.Pd = get_number(s, "Pd", p.Pd);
    p.Qd = get_number(s, "Qd", 0.05);
    p.Ed = get_number(s, "Ed", p.Ed);
    p.omega_d = get_number(s, "omega_d", p.omega_d);
    p.B = get_number(s, "B", p.B);
    p.E_hat = get_number(s, "E_hat", p.E_hat);
    p.validate();
    sys = System::single(p);
  } else if (type == "two-inverter" || type == "tree") {
    sys = System::builtin(type == "tree" ? SystemKind::tree : SystemKind::two_inverter,
                          get_number(s, "P", 0.0), get_number(s, "B", 1.5), parse_defaults(s));
  } else if (type == "network") {
    if (!has("network")) throw ConfigError("network system needs a 'network' block");
    Model m;
    m.net = parse_network(from("network"));
    m.params = parse_params(has("params") ? from("params") : json(nullptr), m.net.size());
    if (has("slack") && !from("slack").is_null()) {
      const json& sl = from("slack");
      if (!sl.contains("node")) throw ConfigError("'slack' needs 'node'");
      m.slack = SlackBus{sl.at("node").get<std::size_t>(), get_number(sl, "E", 1.0)};
    }
    sys = System::network(std::move(m));
  } else {
    throw ConfigError("unknown system type '" + type + "'");
  }
  if (cfg.contains("set")) {
    const json& set = cfg.at("set");
    if (!set.is_object()) throw ConfigError("'set' must be an object of path: value");
    for (const auto& [path, v] : set.items()) {
      if (!v.is_number()) throw ConfigError("value of '" + path + "' must be a number");
      sys.set(path, v.get<double>());
    }
  }
  return sys;
}

inline SweepAxis parse_axis(const json& j, const char* name) {
  if (!j.is_object()) throw ConfigError(std::string("sweep axis '") + name + "' must be an object");
  if (!j.contains("path") || !j.at("path").is_string())
    throw ConfigError(std::string("sweep axis '") + name + "' needs a 'path'");
  SweepAxis a;
  a.path = j.at("path").get<std::string>();
  a.min = require_number(j, "min");
  a.max = require_number(j, "max");
  const double count = require_number(j, "count");
  if (count < 2 || count != std::floor(count)) throw ConfigError("axis count must be an integer >= 2");
  a.count = static_cast<std::size_t>(count);
  a.validate();
  return a;
}

inline SweepSpec parse_sweep(const json& cfg, std::uint64_t seed) {
  if (!cfg.contains("sweep")) throw ConfigError("config has no 'sweep' block");
  const json& s = cfg.at("sweep");
  SweepSpec spec;
  spec.system = parse_system(cfg);
  spec.x = parse_axis(s.at("x"), "x");
  spec.y = parse_axis(s.contains("y") ? s.at("y") : json(nullptr), "y");
  spec.seed = seed;
  if (s.contains("evaluators")) {
    spec.criteria = false;
    if (!s.at("evaluators").is_array()) throw ConfigError("'evaluators' must be an array");
    for (const auto& e : s.at("evaluators")) {
      const auto name = e.get<std::string>();
      if (std::find(kMapCriteria.begin(), kMapCriteria.end(), name) != kMapCriteria.end())
        spec.criteria = true;
      else if (name != "fixed-point" && name != "eigen")
        throw ConfigError("unknown evaluator '" + name + "'");
    }
  }
  spec.validate();
  return spec;
}

inline Schedule parse_schedule(const json& cfg) {
  Schedule s;
  s.t_end = get_number(cfg, "t_end", s.t_end);
  for (const auto& e : cfg.value("events", json::array())) {
    if (!e.contains("path") || !e.at("path").is_string()) throw ConfigError("event needs 'path'");
    s.events.push_back({require_number(e, "t"), e.at("path").get<std::string>(), require_number(e, "value")});
  }
  s.validate();
  return s;
}

inline Tolerances parse_tolerances(const json& cfg) {
  Tolerances t;
  t.rtol = get_number(cfg, "rtol", t.rtol);
  t.atol = get_number(cfg, "atol", t.atol);
  t.sample_dt = get_number(cfg, "sample_dt", t.sample_dt);
  return t;
}

inline SystemState parse_state(const json& j, std::size_t n) {
  return {parse_node_values(j, "delta", n, 0.0), parse_node_values(j, "omega", n, 0.0),
          parse_node_values(j, "E", n, 1.0)};
}

// ---------------------------------------------------------- serialization

inline json to_json(const Equilibrium& eq) {
  return {{"delta", to_json(eq.state.delta)},
          {"E", to_json(eq.state.E)},
          {"residual_norm", eq.residual_norm},
          {"method", to_string(eq.method)},
          {"slack", eq.slack ? json(*eq.slack) : json(nullptr)}};
}

inline json complex_pair(std::complex<double> z) {
  return json::array({number_or_null(z.real()), number_or_null(z.imag())});
}

inline json to_json(const StabilityReport& r) {
  json ev = json::array();
  for (Eigen::Index i = 0; i < r.eigenvalues.size(); ++i) ev.push_back(complex_pair(r.eigenvalues(i)));
  json out = {{"eigenvalues", ev},
              {"dominant", complex_pair(r.dominant)},
              {"verdict", to_string(r.verdict)},
              {"zero_mode_excluded", r.zero_mode_excluded}};
  return out;
}

inline json to_json(const CriterionResult& r) {
  return {{"name", r.name},
          {"kind", to_string(r.kind)},
          {"verdict", to_string(r.verdict)},
          {"margin", number_or_null(r.margin)},
          {"detail", to_json(r.detail)},
          {"note", r.note}};
}

inline json to_json(const CriteriaReport& rep) {
  json a = json::array();
  for (const auto& r : rep.results) a.push_back(to_json(r));
  return a;
}

inline json to_json(const SweepAxis& a) {
  return {{"path", a.path}, {"min", a.min}, {"max", a.max}, {"count", a.count}};
}

inline json to_json(const StabilityMap& map) {
  json cells = json::array();
  for (const auto& c : map.cells) {
    json v = json::object();
    for (std::size_t k = 0; k < kMapCriteria.size(); ++k) v[kMapCriteria[k]] = c.verdicts[k];
    json cell = {{"x", c.x},
                 {"y", c.y},
                 {"status", to_string(c.status)},
                 {"n_stable", c.n_stable},
                 {"dominant_re", number_or_null(c.dominant_re)},
                 {"dominant_im", number_or_null(c.dominant_im)},
                 {"delta_star", number_or_null(c.delta_star)},
                 {"E_star", number_or_null(c.E_star)},
                 {"verdicts", v}};
    if (!c.note.empty()) cell["note"] = c.note;
    cells.push_back(std::move(cell));
  }
  return {{"x_axis", to_json(map.x)}, {"y_axis", to_json(map.y)}, {"cells", cells}};
}

inline json to_json(const std::vector<Polyline>& lines) {
  json a = json::array();
  for (const auto& pl : lines) {
    json pts = json::array();
    for (const auto& p : pl.points) pts.push_back(json::array({p[0], p[1]}));
    a.push_back(json{{"points", pts}});
  }
  return a;
}

inline json to_json(const AuditReport& r) {
  json bad = json::array();
  for (const auto& p : r.violating_cells) bad.push_back(json::array({p[0], p[1]}));
  return {{"criterion", r.criterion},
          {"evaluated", r.evaluated},
          {"eigen_stable", r.eigen_stable},
          {"criterion_satisfied", r.criterion_satisfied},
          {"violations", r.violations},
          {"coverage", r.coverage},
          {"violating_cells", bad}};
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  const std::size_t n = tr.states.empty() ? 0 : tr.states.front().size();
  os << 't';
  for (const char* name : {"delta", "omega", "E"})
    for (std::size_t j = 0; j < n; ++j) os << ',' << name << '_' << j;
  os << '\n';
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    format_number(os, tr.times[i]);
    const Vector v = pack(tr.states[i]);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      os << ',';
      format_number(os, v(k));
    }
    os << '\n';
  }
}

}  // namespace droopstab::io
