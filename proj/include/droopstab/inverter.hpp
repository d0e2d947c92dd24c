#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "droopstab/grid.hpp"

namespace droopstab {

/// Per-node droop-control parameters plus the grid-wide desired frequency.
struct InverterParams {
  Vector tau;    // low-pass time constant (s)
  Vector kappa;  // active power droop gain
  Vector chi;    // reactive power droop gain
  Vector Pd;     // desired active power (pu)
  Vector Qd;     // desired reactive power (pu)
  Vector Ed;     // desired voltage (pu)
  double omega_d = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(tau.size()); }

  static InverterParams uniform(std::size_t n, double tau, double kappa, double chi, double Pd,
                                double Qd, double Ed, double omega_d = 0.0) {
    const auto N = static_cast<Eigen::Index>(n);
    return {Vector::Constant(N, tau), Vector::Constant(N, kappa), Vector::Constant(N, chi),
            Vector::Constant(N, Pd),  Vector::Constant(N, Qd),    Vector::Constant(N, Ed),
            omega_d};
  }

  void validate(std::size_t n) const {
    const auto N = static_cast<Eigen::Index>(n);
    for (const Vector* v : {&tau, &kappa, &chi, &Pd, &Qd, &Ed}) {
      if (v->size() != N) throw InvalidModel("inverter parameter vector has wrong length");
      if (!v->allFinite()) throw InvalidModel("inverter parameters must be finite");
    }
    if ((tau.array() <= 0.0).any()) throw InvalidModel("tau must be strictly positive");
    if ((kappa.array() <= 0.0).any()) throw InvalidModel("kappa must be strictly positive");
    if ((chi.array() <= 0.0).any()) throw InvalidModel("chi must be strictly positive");
    if ((Ed.array() <= 0.0).any()) throw InvalidModel("desired voltage must be positive");
    if (!std::isfinite(omega_d)) throw InvalidModel("omega_d must be finite");
  }
};

/// Node held at phase 0 and a fixed voltage magnitude; its equilibrium and
/// dynamic equations are dropped.
struct SlackBus {
  std::size_t node = 0;
  double voltage = 1.0;

  bool operator==(const SlackBus&) const = default;
};

/// Everything needed to evaluate the dynamics: network, controllers, and the
/// optional slack anchor.
struct Model {
  GridNetwork net;
  InverterParams params;
  std::optional<SlackBus> slack;

  std::size_t size() const { return net.size(); }

  void validate() const {
    params.validate(net.size());
    if (slack) {
      if (slack->node >= net.size()) throw InvalidModel("slack node out of range");
      if (!(slack->voltage > 0.0)) throw InvalidModel("slack voltage must be positive");
    }
  }

  /// Indices of the nodes that carry dynamics (all but the slack).
  std::vector<std::size_t> dynamic_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < net.size(); ++j)
      if (!slack || slack->node != j) out.push_back(j);
    return out;
  }

  /// Default Newton start: zero angles, desired voltages, slack pinned.
  SystemState flat_start() const {
    SystemState s = SystemState::flat(net.size());
    s.E = params.Ed;
    if (slack) s.E(static_cast<Eigen::Index>(slack->node)) = slack->voltage;
    return s;
  }
};

}  // namespace droopstab
