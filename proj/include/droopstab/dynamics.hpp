#pragma once

// Nonlinear equations of motion of droop-controlled inverters in the lab
// frame:
//   d(delta_j)/dt   = omega_j
//   tau_j d(omega_j)/dt = -omega_j + omega_d - kappa_j (P_j - Pd_j)
//   tau_j d(E_j)/dt     = -E_j + Ed_j - chi_j (Q_j - Qd_j)
// A slack node is an infinite bus: its derivatives are identically zero.

#include "droopstab/inverter.hpp"

namespace droopstab {

/// Time derivative of the state.  The result reuses SystemState as a plain
/// container for (d delta/dt, d omega/dt, dE/dt).
inline SystemState vector_field(const Model& m, const SystemState& x) {
  const auto n = static_cast<Eigen::Index>(m.size());
  const auto pq = power_injections(x, m.net);
  const InverterParams& p = m.params;
  SystemState dx{Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    if (m.slack && static_cast<Eigen::Index>(m.slack->node) == j) continue;
    dx.delta(j) = x.omega(j);
    dx.omega(j) = (-x.omega(j) + p.omega_d - p.kappa(j) * (pq.P(j) - p.Pd(j))) / p.tau(j);
    dx.E(j) = (-x.E(j) + p.Ed(j) - p.chi(j) * (pq.Q(j) - p.Qd(j))) / p.tau(j);
  }
  return dx;
}

/// Stacks (delta, omega, E) into one vector of length 3N.
inline Vector pack(const SystemState& x) {
  const auto n = x.delta.size();
  Vector v(3 * n);
  v << x.delta, x.omega, x.E;
  return v;
}

inline SystemState unpack(const Vector& v) {
  const auto n = v.size() / 3;
  return {v.head(n), v.segment(n, n), v.tail(n)};
}

}  // namespace droopstab
