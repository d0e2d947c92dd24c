#pragma once

// Parameterized test systems addressed by dotted paths, shared by sweeps and
// simulation schedules:
//   single.<tau|kappa|chi|Pd|Qd|Ed|omega_d|B|E_hat>   single inverter only
//   system.<P|B>                                       built-in topologies
//   inverter.<j|*>.<tau|kappa|chi|Pd|Qd|Ed>            any system
//   global.omega_d, global.B_scale, slack.E            any system

#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "droopstab/equilibrium.hpp"

namespace droopstab {

class InvalidPath : public InvalidModel {
 public:
  explicit InvalidPath(const std::string& path)
      : InvalidModel("unknown or unsupported parameter path '" + path + "'") {}
};

enum class SystemKind { single_inverter, two_inverter, tree, network };

inline const char* to_string(SystemKind k) {
  switch (k) {
    case SystemKind::single_inverter: return "single-inverter";
    case SystemKind::two_inverter: return "two-inverter";
    case SystemKind::tree: return "tree";
    default: return "network";
  }
}

/// Controller defaults used by the built-in topologies.
struct ControllerDefaults {
  double tau = 0.1;
  double kappa = 1.0;
  double chi = 0.5;
  double Qd = 0.05;
  double Ed = 1.0;
  double omega_d = 0.0;
};

/// Two inverters on one line, Pd = (P, -P), node 1 is the slack.
inline Model two_inverter_model(double P, double B, const ControllerDefaults& c = {},
                                double slack_E = 1.0) {
  const Coupling line{0, 1, B};
  const GridNetwork net = build_network(2, {&line, 1}, {}, true);
  InverterParams p = InverterParams::uniform(2, c.tau, c.kappa, c.chi, 0.0, c.Qd, c.Ed, c.omega_d);
  p.Pd << P, -P;
  return {net, p, SlackBus{1, slack_E}};
}

/// Ten-node tree: node 0 is the central slack, nodes 1-3 the other inner
/// nodes, each carrying two leaves (4,5 on 1; 6,7 on 2; 8,9 on 3).  Leaves
/// produce P, inner nodes consume 3P/2.
inline Model tree_model(double P, double B, const ControllerDefaults& c = {},
                        double slack_E = 1.0) {
  std::vector<Coupling> lines;
  for (std::size_t k = 1; k <= 3; ++k) {
    lines.push_back({0, k, B});
    lines.push_back({k, 2 * k + 2, B});
    lines.push_back({k, 2 * k + 3, B});
  }
  const GridNetwork net = build_network(10, lines, {}, true);
  InverterParams p = InverterParams::uniform(10, c.tau, c.kappa, c.chi, 0.0, c.Qd, c.Ed, c.omega_d);
  for (Eigen::Index j = 0; j < 4; ++j) p.Pd(j) = -1.5 * P;
  for (Eigen::Index j = 4; j < 10; ++j) p.Pd(j) = P;
  return {net, p, SlackBus{0, slack_E}};
}

/// A system description that can be modified by path and turned into a
/// concrete Model.
class System {
 public:
  static System single(const SingleInverterParams& p) {
    System s(SystemKind::single_inverter);
    s.single_ = p;
    return s;
  }
  static System builtin(SystemKind kind, double P, double B, const ControllerDefaults& c = {}) {
    if (kind != SystemKind::two_inverter && kind != SystemKind::tree)
      throw InvalidModel("not a built-in topology");
    System s(kind);
    s.P_ = P;
    s.B_ = B;
    s.defaults_ = c;
    return s;
  }
  static System network(Model m) {
    m.validate();
    System s(SystemKind::network);
    s.model_ = std::move(m);
    return s;
  }

  SystemKind kind() const { return kind_; }
  const SingleInverterParams& single_params() const { return single_; }

  void set(const std::string& path, double value) {
    if (!std::isfinite(value)) throw InvalidModel("value for '" + path + "' must be finite");
    const auto parts = split(path);
    if (parts.size() == 2 && parts[0] == "single" && kind_ == SystemKind::single_inverter) {
      if (double* f = single_field(parts[1])) {
        *f = value;
        return;
      }
    } else if (parts.size() == 2 && parts[0] == "system" &&
               (kind_ == SystemKind::two_inverter || kind_ == SystemKind::tree)) {
      if (parts[1] == "P") return void(P_ = value);
      if (parts[1] == "B") return void(B_ = value);
    } else if (parts.size() == 2 && parts[0] == "global") {
      if (parts[1] == "omega_d") return void(omega_d_ = value);
      if (parts[1] == "B_scale") {
        if (!(value > 0.0)) throw InvalidModel("global.B_scale must be positive");
        return void(B_scale_ = value);
      }
    } else if (parts.size() == 2 && parts[0] == "slack" && parts[1] == "E") {
      if (!(value > 0.0)) throw InvalidModel("slack.E must be positive");
      return void(slack_E_ = value);
    } else if (parts.size() == 3 && parts[0] == "inverter" && is_inverter_field(parts[2])) {
      std::optional<std::size_t> node;
      if (parts[1] != "*") {
        std::size_t j = 0;
        const auto* b = parts[1].data();
        const auto [ptr, ec] = std::from_chars(b, b + parts[1].size(), j);
        if (ec != std::errc{} || ptr != b + parts[1].size()) throw InvalidPath(path);
        if (j >= size()) throw InvalidModel("inverter index out of range in '" + path + "'");
        node = j;
      }
      if (kind_ == SystemKind::single_inverter) {
        if (node && *node != 0) throw InvalidModel("the single inverter is node 0");
        *single_field(std::string(parts[2])) = value;
        return;
      }
      overrides_.push_back({node, std::string(parts[2]), value});
      return;
    }
    throw InvalidPath(path);
  }

  std::size_t size() const {
    switch (kind_) {
      case SystemKind::single_inverter: return 2;
      case SystemKind::two_inverter: return 2;
      case SystemKind::tree: return 10;
      default: return model_.size();
    }
  }

  Model materialize() const {
    if (kind_ == SystemKind::single_inverter) return single_effective().to_model();
    Model m;
    if (kind_ == SystemKind::two_inverter) m = two_inverter_model(P_, B_, defaults_);
    else if (kind_ == SystemKind::tree) m = tree_model(P_, B_, defaults_);
    else m = model_;
    if (B_scale_) m.net = m.net.scaled(*B_scale_);
    if (omega_d_) m.params.omega_d = *omega_d_;
    if (slack_E_ && m.slack) m.slack->voltage = *slack_E_;
    for (const auto& o : overrides_) {
      Vector& v = param_vector(m.params, o.field);
      if (o.node) v(static_cast<Eigen::Index>(*o.node)) = o.value;
      else v.setConstant(o.value);
    }
    m.validate();
    return m;
  }

  /// Single-inverter parameters after global modifiers.
  SingleInverterParams single_effective() const {
    SingleInverterParams p = single_;
    if (B_scale_) p.B *= *B_scale_;
    if (omega_d_) p.omega_d = *omega_d_;
    if (slack_E_) p.E_hat = *slack_E_;
    return p;
  }

 private:
  struct Override {
    std::optional<std::size_t> node;
    std::string field;
    double value;
  };

  explicit System(SystemKind k) : kind_(k) {}

  static std::vector<std::string_view> split(std::string_view path) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= path.size(); ++i) {
      if (i == path.size() || path[i] == '.') {
        out.push_back(path.substr(start, i - start));
        start = i + 1;
      }
    }
    return out;
  }

  static bool is_inverter_field(std::string_view f) {
    return f == "tau" || f == "kappa" || f == "chi" || f == "Pd" || f == "Qd" || f == "Ed";
  }

  static Vector& param_vector(InverterParams& p, const std::string& f) {
    if (f == "tau") return p.tau;
    if (f == "kappa") return p.kappa;
    if (f == "chi") return p.chi;
    if (f == "Pd") return p.Pd;
    if (f == "Qd") return p.Qd;
    return p.Ed;
  }

  double* single_field(std::string_view f) {
    if (f == "tau") return &single_.tau;
    if (f == "kappa") return &single_.kappa;
    if (f == "chi") return &single_.chi;
    if (f == "Pd") return &single_.Pd;
    if (f == "Qd") return &single_.Qd;
    if (f == "Ed") return &single_.Ed;
    if (f == "omega_d") return &single_.omega_d;
    if (f == "B") return &single_.B;
    if (f == "E_hat") return &single_.E_hat;
    return nullptr;
  }

  SystemKind kind_;
  SingleInverterParams single_;
  double P_ = 0.0;
  double B_ = 1.5;
  ControllerDefaults defaults_;
  Model model_;
  std::optional<double> B_scale_, omega_d_, slack_E_;
  std::vector<Override> overrides_;
};

}  // namespace droopstab
