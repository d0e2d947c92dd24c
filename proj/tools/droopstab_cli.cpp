// Command-line front end.  Every subcommand reads one JSON config; see
// configs/ for examples.
//
// Exit codes: 0 success, 2 invalid config, 3 failures in the results
// (solver failures, failed sweep cells).

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "droopstab/droopstab.hpp"
#include "droopstab/io.hpp"

namespace {

using namespace droopstab;
using io::json;

constexpr int kOk = 0;
constexpr int kInvalidConfig = 2;
constexpr int kFailures = 3;

struct Options {
  std::string config;
  std::string out;
  std::string format;
  unsigned threads = 1;
  std::uint64_t seed = 0;
};

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw io::ConfigError("cannot open output file '" + path + "'");
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

bool want_csv(const Options& o, bool csv_default) {
  if (o.format.empty()) return csv_default;
  return o.format == "csv";
}

int cmd_fixed_point(const Options& o, const json& cfg) {
  const System sys = io::parse_system(cfg);
  const SystemAnalysis an = analyze(sys, false);
  Output out(o.out);
  if (want_csv(o, false)) {
    out.stream() << "equilibrium,node,delta,E,residual_norm,method\n";
    for (std::size_t k = 0; k < an.points.size(); ++k) {
      const auto& eq = an.points[k].eq;
      for (Eigen::Index j = 0; j < eq.state.delta.size(); ++j) {
        out.stream() << k << ',' << j << ',';
        format_number(out.stream(), eq.state.delta(j));
        out.stream() << ',';
        format_number(out.stream(), eq.state.E(j));
        out.stream() << ',';
        format_number(out.stream(), eq.residual_norm);
        out.stream() << ',' << to_string(eq.method) << '\n';
      }
    }
  } else {
    json a = json::array();
    for (const auto& p : an.points) a.push_back(io::to_json(p.eq));
    out.stream() << a.dump(2) << '\n';
  }
  if (an.points.empty()) std::cerr << "no equilibrium: " << an.solver_note << '\n';
  const bool solver_failed = an.points.empty() && sys.kind() != SystemKind::single_inverter;
  return solver_failed ? kFailures : kOk;
}

int cmd_stability(const Options& o, const json& cfg) {
  const System sys = io::parse_system(cfg);
  const SystemAnalysis an = analyze(sys, false);
  Output out(o.out);
  if (want_csv(o, false)) {
    out.stream() << "equilibrium,verdict,re,im\n";
    for (std::size_t k = 0; k < an.points.size(); ++k) {
      const auto& r = an.points[k].stability;
      for (Eigen::Index i = 0; i < r.eigenvalues.size(); ++i) {
        out.stream() << k << ',' << to_string(r.verdict) << ',';
        format_number(out.stream(), r.eigenvalues(i).real());
        out.stream() << ',';
        format_number(out.stream(), r.eigenvalues(i).imag());
        out.stream() << '\n';
      }
    }
  } else {
    json a = json::array();
    for (const auto& p : an.points)
      a.push_back({{"equilibrium", io::to_json(p.eq)}, {"stability", io::to_json(p.stability)}});
    out.stream() << a.dump(2) << '\n';
  }
  if (an.points.empty()) std::cerr << "no equilibrium: " << an.solver_note << '\n';
  return an.points.empty() && sys.kind() != SystemKind::single_inverter ? kFailures : kOk;
}

int cmd_criteria(const Options& o, const json& cfg) {
  const System sys = io::parse_system(cfg);
  const SystemAnalysis an = analyze(sys, true, o.seed);
  Output out(o.out);
  if (want_csv(o, false)) {
    out.stream() << "equilibrium,name,kind,verdict,margin\n";
    for (std::size_t k = 0; k < an.points.size(); ++k)
      for (const auto& r : an.points[k].criteria.results) {
        out.stream() << k << ',' << r.name << ',' << to_string(r.kind) << ','
                     << to_string(r.verdict) << ',';
        format_number(out.stream(), r.margin);
        out.stream() << '\n';
      }
  } else {
    json a = json::array();
    for (const auto& p : an.points)
      a.push_back({{"equilibrium", io::to_json(p.eq)},
                   {"verdict", to_string(p.stability.verdict)},
                   {"criteria", io::to_json(p.criteria)}});
    out.stream() << a.dump(2) << '\n';
  }
  if (an.points.empty()) std::cerr << "no equilibrium: " << an.solver_note << '\n';
  return an.points.empty() && sys.kind() != SystemKind::single_inverter ? kFailures : kOk;
}

int cmd_simulate(const Options& o, const json& cfg) {
  const System sys = io::parse_system(cfg);
  const Schedule sched = io::parse_schedule(cfg);
  const Tolerances tol = io::parse_tolerances(cfg);
  const double window = io::get_number(cfg, "window", std::min(5.0, sched.t_end / 3.0));
  const Model m = sys.materialize();

  SystemState init;
  const json init_cfg = cfg.value("init", json("equilibrium"));
  if (init_cfg.is_string() && init_cfg.get<std::string>() == "equilibrium") {
    const SystemAnalysis an = analyze(sys, false);
    const PointAnalysis* best = an.most_stable();
    if (!best) {
      std::cerr << "no equilibrium to start from: " << an.solver_note << '\n';
      return kFailures;
    }
    init = best->eq.lab_state();
  } else if (init_cfg.is_string() && init_cfg.get<std::string>() == "flat") {
    init = m.flat_start();
  } else if (init_cfg.is_object()) {
    init = io::parse_state(init_cfg, m.size());
  } else {
    throw io::ConfigError("'init' must be \"equilibrium\", \"flat\" or a state object");
  }
  if (cfg.contains("perturbation")) {
    const json& p = cfg.at("perturbation");
    for (auto j : m.dynamic_nodes()) {
      const auto k = static_cast<Eigen::Index>(j);
      init.delta(k) += io::get_number(p, "delta", 0.0);
      init.omega(k) += io::get_number(p, "omega", 0.0);
      init.E(k) += io::get_number(p, "E", 0.0);
    }
  }

  const Trajectory tr = integrate(sys, init, sched, tol);
  const auto segments = classify_segments(tr, window);
  Output out(o.out);
  if (want_csv(o, true)) {
    io::write_trajectory_csv(out.stream(), tr);
  } else {
    json states = json::array();
    for (std::size_t i = 0; i < tr.times.size(); ++i)
      states.push_back({{"t", tr.times[i]},
                        {"delta", io::to_json(tr.states[i].delta)},
                        {"omega", io::to_json(tr.states[i].omega)},
                        {"E", io::to_json(tr.states[i].E)}});
    json seg = json::array();
    for (auto c : segments) seg.push_back(to_string(c));
    out.stream() << json{{"classification", to_string(tr.classification)},
                         {"segments", seg},
                         {"final_residual", io::number_or_null(tr.final_residual)},
                         {"integration_failed", tr.integration_failed},
                         {"samples", states}}
                        .dump(2)
                 << '\n';
  }
  std::cerr << "segments:";
  for (auto c : segments) std::cerr << ' ' << to_string(c);
  std::cerr << '\n';
  return tr.integration_failed ? kFailures : kOk;
}

int cmd_sweep(const Options& o, const json& cfg) {
  const SweepSpec spec = io::parse_sweep(cfg, o.seed);
  const StabilityMap map = sweep(spec, o.threads);
  Output out(o.out);
  if (want_csv(o, true)) write_map_csv(out.stream(), map);
  else out.stream() << io::to_json(map).dump(2) << '\n';
  const auto failed = map.failures();
  if (failed) std::cerr << failed << " cell(s) failed\n";
  return failed ? kFailures : kOk;
}

int cmd_separatrix(const Options& o, const json& cfg) {
  SweepSpec spec = io::parse_sweep(cfg, o.seed);
  spec.criteria = false;
  const StabilityMap map = sweep(spec, o.threads);
  const double res = cfg.contains("separatrix")
                         ? io::get_number(cfg.at("separatrix"), "resolution", 1e-3)
                         : 1e-3;
  const auto lines = separatrix(map, spec.system, res, o.threads);
  Output out(o.out);
  if (want_csv(o, false)) {
    out.stream() << "polyline,x,y\n";
    for (std::size_t k = 0; k < lines.size(); ++k)
      for (const auto& p : lines[k].points) {
        out.stream() << k << ',';
        format_number(out.stream(), p[0]);
        out.stream() << ',';
        format_number(out.stream(), p[1]);
        out.stream() << '\n';
      }
  } else {
    out.stream() << io::to_json(lines).dump(2) << '\n';
  }
  return map.failures() ? kFailures : kOk;
}

int cmd_audit(const Options& o, const json& cfg) {
  SweepSpec spec = io::parse_sweep(cfg, o.seed);
  spec.criteria = true;
  std::vector<std::string> names{"cor4", "cor5", "lemma2_I", "lemma2_II", "cor2"};
  if (cfg.contains("audit") && cfg.at("audit").contains("criteria"))
    names = cfg.at("audit").at("criteria").get<std::vector<std::string>>();
  for (const auto& n : names)
    if (std::find(kMapCriteria.begin(), kMapCriteria.end(), n) == kMapCriteria.end())
      throw io::ConfigError("unknown criterion '" + n + "' in audit");
  const StabilityMap map = sweep(spec, o.threads);
  Output out(o.out);
  std::vector<AuditReport> reports;
  for (const auto& n : names) reports.push_back(containment_audit(map, n));
  if (want_csv(o, false)) {
    out.stream() << "criterion,evaluated,eigen_stable,criterion_satisfied,violations,coverage\n";
    for (const auto& r : reports) {
      out.stream() << r.criterion << ',' << r.evaluated << ',' << r.eigen_stable << ','
                   << r.criterion_satisfied << ',' << r.violations << ',';
      format_number(out.stream(), r.coverage);
      out.stream() << '\n';
    }
  } else {
    json a = json::array();
    for (const auto& r : reports) a.push_back(io::to_json(r));
    out.stream() << a.dump(2) << '\n';
  }
  return map.failures() ? kFailures : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stability analysis of droop-controlled inverter networks"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "JSON config file")->required();
  app.add_option("--out", o.out, "output file (default: stdout)");
  app.add_option("--format", o.format, "output format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--threads", o.threads, "worker threads for sweeps")->check(CLI::PositiveNumber);
  app.add_option("--seed", o.seed, "seed for randomized subset tests");

  using Handler = int (*)(const Options&, const json&);
  const std::pair<const char*, Handler> commands[] = {
      {"fixed-point", cmd_fixed_point}, {"stability", cmd_stability},
      {"criteria", cmd_criteria},       {"simulate", cmd_simulate},
      {"sweep", cmd_sweep},             {"separatrix", cmd_separatrix},
      {"audit", cmd_audit},
  };
  for (const auto& [name, fn] : commands) app.add_subcommand(name, "");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalidConfig;
  }

  try {
    const json cfg = io::load_file(o.config);
    for (const auto& [name, fn] : commands)
      if (app.got_subcommand(name)) return fn(o, cfg);
  } catch (const InvalidModel& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kInvalidConfig;
  } catch (const json::exception& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailures;
  }
  return kInvalidConfig;
}
