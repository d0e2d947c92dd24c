#pragma once

// Stationary operating points.  In a frame rotating with the common grid
// frequency every omega_j vanishes and the conditions per dynamic node are
//   omega_d - frame + kappa_j (Pd_j - P_j) = 0
//   Ed_j - E_j + chi_j (Qd_j - Q_j)        = 0
// With a slack node the frame is the slack's (frame = 0).  Without one the
// frame frequency is an extra unknown and delta_0 = 0 fixes the gauge.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "droopstab/dynamics.hpp"

namespace droopstab {

enum class EquilibriumMethod { analytic_quartic, newton };

inline const char* to_string(EquilibriumMethod m) {
  return m == EquilibriumMethod::analytic_quartic ? "analytic-quartic" : "newton";
}

struct Equilibrium {
  SystemState state;  // omega == 0 (rotating frame)
  double residual_norm = 0.0;
  EquilibriumMethod method = EquilibriumMethod::newton;
  std::optional<std::size_t> slack;
  double frame_frequency = 0.0;  // common frequency in the lab frame
  int iterations = 0;

  /// The same operating point in lab coordinates (omega_j = frame frequency
  /// on dynamic nodes), suitable as an initial condition for integration.
  SystemState lab_state() const {
    SystemState s = state;
    s.omega.setConstant(frame_frequency);
    if (slack) s.omega(static_cast<Eigen::Index>(*slack)) = 0.0;
    return s;
  }
};

class SolverError : public std::runtime_error {
 public:
  enum class Kind { no_convergence, singular_jacobian, residual_check };

  SolverError(Kind kind, const std::string& what, SystemState iterate)
      : std::runtime_error(what), kind_(kind), iterate_(std::move(iterate)) {}

  Kind kind() const { return kind_; }
  const SystemState& iterate() const { return iterate_; }

 private:
  Kind kind_;
  SystemState iterate_;
};

/// Stacked stationarity residuals: frequency rows of the dynamic nodes, then
/// their voltage rows.  The slack node contributes no rows.
inline Vector residual(const SystemState& state, const Model& m, double frame_frequency = 0.0) {
  const auto dyn = m.dynamic_nodes();
  const auto nd = static_cast<Eigen::Index>(dyn.size());
  const auto pq = power_injections(state, m.net);
  const InverterParams& p = m.params;
  Vector r(2 * nd);
  for (Eigen::Index i = 0; i < nd; ++i) {
    const auto j = static_cast<Eigen::Index>(dyn[static_cast<std::size_t>(i)]);
    r(i) = p.omega_d - frame_frequency - state.omega(j) + p.kappa(j) * (p.Pd(j) - pq.P(j));
    r(nd + i) = p.Ed(j) - state.E(j) + p.chi(j) * (p.Qd(j) - pq.Q(j));
  }
  return r;
}

inline double residual_norm(const SystemState& state, const Model& m, double frame_frequency = 0.0) {
  const Vector r = residual(state, m, frame_frequency);
  return r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
}

/// Common frequency of a slack-free lossless system, from summing the
/// frequency conditions weighted by 1/kappa (injections cancel).
inline double lossless_frame_frequency(const InverterParams& p) {
  const double inv_k = p.kappa.cwiseInverse().sum();
  return p.omega_d + p.Pd.sum() / inv_k;
}

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0.0) a += two_pi;
  return a - std::numbers::pi;
}

struct NewtonOptions {
  int max_iterations = 50;
  double tolerance = 1e-10;
  double acceptance = 1e-8;  // post-hoc residual bound for any returned point
};

namespace detail {

// Unknown layout.  Slack mode: delta and E of every dynamic node.  Free
// mode: delta of nodes 1..N-1, E of all nodes, then the frame frequency.
struct NewtonLayout {
  std::vector<std::size_t> dyn;
  std::vector<std::size_t> angle_nodes;
  bool free_frame = false;

  Eigen::Index size() const {
    return static_cast<Eigen::Index>(angle_nodes.size() + dyn.size()) + (free_frame ? 1 : 0);
  }

  Vector gather(const SystemState& s, double frame) const {
    Vector x(size());
    Eigen::Index k = 0;
    for (auto j : angle_nodes) x(k++) = s.delta(static_cast<Eigen::Index>(j));
    for (auto j : dyn) x(k++) = s.E(static_cast<Eigen::Index>(j));
    if (free_frame) x(k) = frame;
    return x;
  }

  void scatter(const Vector& x, SystemState& s, double& frame) const {
    Eigen::Index k = 0;
    for (auto j : angle_nodes) s.delta(static_cast<Eigen::Index>(j)) = x(k++);
    for (auto j : dyn) s.E(static_cast<Eigen::Index>(j)) = x(k++);
    if (free_frame) frame = x(k);
  }
};

inline NewtonLayout make_layout(const Model& m) {
  NewtonLayout lay;
  lay.dyn = m.dynamic_nodes();
  lay.free_frame = !m.slack;
  for (auto j : lay.dyn)
    if (m.slack || j != 0) lay.angle_nodes.push_back(j);
  return lay;
}

inline Matrix residual_jacobian(const SystemState& s, const Model& m, const NewtonLayout& lay) {
  const auto J = power_flow_jacobian(s, m.net);
  const InverterParams& p = m.params;
  const auto nd = static_cast<Eigen::Index>(lay.dyn.size());
  const auto na = static_cast<Eigen::Index>(lay.angle_nodes.size());
  Matrix out = Matrix::Zero(2 * nd, lay.size());
  for (Eigen::Index r = 0; r < nd; ++r) {
    const auto j = static_cast<Eigen::Index>(lay.dyn[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < na; ++c) {
      const auto l = static_cast<Eigen::Index>(lay.angle_nodes[static_cast<std::size_t>(c)]);
      out(r, c) = -p.kappa(j) * J.dP_ddelta(j, l);
      out(nd + r, c) = -p.chi(j) * J.dQ_ddelta(j, l);
    }
    for (Eigen::Index c = 0; c < nd; ++c) {
      const auto l = static_cast<Eigen::Index>(lay.dyn[static_cast<std::size_t>(c)]);
      out(r, na + c) = -p.kappa(j) * J.dP_dE(j, l);
      out(nd + r, na + c) = -p.chi(j) * J.dQ_dE(j, l) - (j == l ? 1.0 : 0.0);
    }
    if (lay.free_frame) out(r, na + nd) = -1.0;
  }
  return out;
}

}  // namespace detail

/// Newton iteration with backtracking on the stationarity conditions.
/// Iterates are kept at strictly positive voltages.  Throws SolverError when
/// no equilibrium is reached from `init` (default: flat start).
inline Equilibrium solve_newton(const Model& m, std::optional<SystemState> init = std::nullopt,
                                const NewtonOptions& opt = {}) {
  m.validate();
  SystemState s = init ? *init : m.flat_start();
  s.validate(m.size());
  s.omega.setZero();
  if (m.slack) {
    const auto k = static_cast<Eigen::Index>(m.slack->node);
    s.delta(k) = 0.0;
    s.E(k) = m.slack->voltage;
  } else {
    const double d0 = s.delta(0);
    s.delta.array() -= d0;
  }
  const auto lay = detail::make_layout(m);
  double frame = m.slack ? 0.0 : lossless_frame_frequency(m.params);

  auto eval = [&](const Vector& x, SystemState& trial, double& fr) {
    lay.scatter(x, trial, fr);
    return residual(trial, m, fr);
  };

  Vector x = lay.gather(s, frame);
  Vector F = residual(s, m, frame);
  const auto nE0 = static_cast<Eigen::Index>(lay.angle_nodes.size());
  const auto nE = static_cast<Eigen::Index>(lay.dyn.size());
  int it = 0;
  for (; F.cwiseAbs().maxCoeff() >= opt.tolerance; ++it) {
    if (it >= opt.max_iterations)
      throw SolverError(SolverError::Kind::no_convergence,
                        "no equilibrium found from this start within " +
                            std::to_string(opt.max_iterations) + " Newton iterations (residual " +
                            std::to_string(F.cwiseAbs().maxCoeff()) + ")",
                        s);
    const Matrix Jr = detail::residual_jacobian(s, m, lay);
    Eigen::FullPivLU<Matrix> lu(Jr);
    lu.setThreshold(1e-13);
    if (lu.rank() < Jr.rows())
      throw SolverError(SolverError::Kind::singular_jacobian,
                        "residual Jacobian is singular at Newton iteration " + std::to_string(it),
                        s);
    const Vector step = lu.solve(-F);

    // Backtrack until the voltages stay positive and the residual decreases.
    const double f0 = F.norm();
    double alpha = 1.0;
    Vector best_x;
    Vector best_F;
    SystemState trial = s;
    double fr = frame;
    for (int k = 0; k < 30; ++k, alpha *= 0.5) {
      const Vector xt = x + alpha * step;
      if ((xt.segment(nE0, nE).array() <= 0.0).any()) continue;
      const Vector Ft = eval(xt, trial, fr);
      if (!Ft.allFinite()) continue;
      if (best_x.size() == 0) {
        best_x = xt;
        best_F = Ft;
      }
      if (Ft.norm() <= (1.0 - 1e-4 * alpha) * f0) {
        best_x = xt;
        best_F = Ft;
        break;
      }
    }
    if (best_x.size() == 0)
      throw SolverError(SolverError::Kind::no_convergence,
                        "Newton step cannot keep voltages positive", s);
    x = best_x;
    F = best_F;
    lay.scatter(x, s, frame);
  }

  // Reduce angles to (-pi, pi]; the conditions only see differences mod 2 pi.
  for (Eigen::Index j = 0; j < s.delta.size(); ++j) s.delta(j) = wrap_angle(s.delta(j));
  if (m.slack) s.delta(static_cast<Eigen::Index>(m.slack->node)) = 0.0;

  Equilibrium eq;
  eq.state = s;
  eq.residual_norm = residual_norm(s, m, frame);
  eq.method = EquilibriumMethod::newton;
  eq.slack = m.slack ? std::optional<std::size_t>(m.slack->node) : std::nullopt;
  eq.frame_frequency = frame;
  eq.iterations = it;
  if ((s.E.array() <= 0.0).any())
    throw SolverError(SolverError::Kind::residual_check, "equilibrium has a non-positive voltage",
                      s);
  if (!(eq.residual_norm < opt.acceptance))
    throw SolverError(SolverError::Kind::residual_check,
                      "post-hoc residual check failed: " + std::to_string(eq.residual_norm), s);
  return eq;
}

/// One inverter coupled through susceptance B to an infinite bus of voltage
/// E_hat.  Modeled as a two-node network whose node 1 is the slack.
struct SingleInverterParams {
  double tau = 0.1;
  double kappa = 1.0;
  double chi = 0.05;
  double Pd = 0.0;
  double Qd = 0.0;
  double Ed = 1.0;
  double omega_d = 0.0;
  double B = 1.5;
  double E_hat = 1.0;

  void validate() const {
    if (!(tau > 0.0) || !(kappa > 0.0) || !(chi > 0.0))
      throw InvalidModel("tau, kappa and chi must be strictly positive");
    if (!(B > 0.0)) throw InvalidModel("coupling susceptance B must be positive");
    if (!(E_hat > 0.0)) throw InvalidModel("grid voltage E_hat must be positive");
    if (!(Ed > 0.0)) throw InvalidModel("desired voltage must be positive");
    for (double v : {Pd, Qd, omega_d})
      if (!std::isfinite(v)) throw InvalidModel("single-inverter parameters must be finite");
  }

  Model to_model() const {
    validate();
    Matrix Bm(2, 2);
    Bm << -B, B, B, -B;
    InverterParams p = InverterParams::uniform(2, tau, kappa, chi, Pd, Qd, Ed, omega_d);
    // The grid node's controller is never evaluated; keep it neutral.
    p.Pd(1) = 0.0;
    p.Qd(1) = 0.0;
    p.Ed(1) = E_hat;
    return {GridNetwork::from_susceptance(Bm), p, SlackBus{1, E_hat}};
  }
};

/// Coefficients c4..c0 of the voltage polynomial obtained by squaring and
/// adding the two stationarity conditions of a single inverter:
///   E hat E B cos(delta) = B E^2 + E/chi - a,   a = Ed/chi + Qd
///   E hat E B sin(delta) = p,                   p = Pd + omega_d/kappa
inline std::array<double, 5> quartic_coefficients(const SingleInverterParams& q) {
  const double a = q.Ed / q.chi + q.Qd;
  const double p = q.Pd + q.omega_d / q.kappa;
  const double B = q.B, x = 1.0 / q.chi;
  return {B * B, 2.0 * B * x, x * x - 2.0 * a * B - q.E_hat * q.E_hat * B * B, -2.0 * a * x,
          a * a + p * p};
}

/// Real roots of c4 E^4 + ... + c0 via the eigenvalues of the companion
/// matrix.  Roots with |Im| < 1e-9 (1 + |Re|) count as real.
inline std::vector<double> real_quartic_roots(const std::array<double, 5>& c) {
  Matrix C = Matrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i) C(0, i) = -c[static_cast<std::size_t>(i + 1)] / c[0];
  for (int i = 1; i < 4; ++i) C(i, i - 1) = 1.0;
  Eigen::EigenSolver<Matrix> es(C, false);
  std::vector<double> out;
  for (Eigen::Index i = 0; i < 4; ++i) {
    const std::complex<double> z = es.eigenvalues()(i);
    if (std::abs(z.imag()) < 1e-9 * (1.0 + std::abs(z.real()))) out.push_back(z.real());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// All admissible equilibria of the single-inverter system, sorted by
/// voltage.  Each candidate from the quartic is validated against the
/// unsquared conditions and polished by Newton; an empty result means no
/// equilibrium exists.
inline std::vector<Equilibrium> single_inverter_equilibria(const SingleInverterParams& q) {
  const Model m = q.to_model();
  const double p = q.Pd + q.omega_d / q.kappa;
  std::vector<Equilibrium> out;
  for (double E : real_quartic_roots(quartic_coefficients(q))) {
    if (!(E > 0.0)) continue;
    const double s = p / (q.E_hat * E * q.B);
    if (std::abs(s) > 1.0 + 1e-9) continue;
    const double base = std::asin(std::clamp(s, -1.0, 1.0));
    for (double delta : {base, std::numbers::pi - base}) {
      SystemState st = SystemState::flat(2, q.E_hat);
      st.delta(0) = wrap_angle(delta);
      st.E(0) = E;
      if (residual_norm(st, m) > 1e-6 * (1.0 + std::abs(E))) continue;
      Equilibrium eq;
      try {
        NewtonOptions polish;
        polish.max_iterations = 8;
        eq = solve_newton(m, st, polish);
      } catch (const SolverError&) {
        continue;  // a near-double root that polishing cannot resolve
      }
      // Polishing must not hop to a different root.
      if (std::abs(eq.state.E(0) - E) > 1e-6 ||
          std::abs(wrap_angle(eq.state.delta(0) - st.delta(0))) > 1e-6)
        continue;
      eq.method = EquilibriumMethod::analytic_quartic;
      const bool dup = std::any_of(out.begin(), out.end(), [&](const Equilibrium& o) {
        return std::abs(o.state.E(0) - eq.state.E(0)) < 1e-9 &&
               std::abs(wrap_angle(o.state.delta(0) - eq.state.delta(0))) < 1e-9;
      });
      if (!dup) out.push_back(eq);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const Equilibrium& a, const Equilibrium& b) { return a.state.E(0) < b.state.E(0); });
  return out;
}

}  // namespace droopstab
