#pragma once

// Time integration of the nonlinear dynamics with the Dormand-Prince 5(4)
// pair, dense output for sampling, and exact parameter steps at scheduled
// event times (the integrator restarts after each event).

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "droopstab/dynamics.hpp"
#include "droopstab/systems.hpp"

namespace droopstab {

struct ScheduledStep {
  double t = 0.0;
  std::string path;
  double value = 0.0;
};

struct Schedule {
  std::vector<ScheduledStep> events;
  double t_end = 10.0;

  void validate() const {
    if (!(t_end > 0.0) || !std::isfinite(t_end)) throw InvalidModel("t_end must be positive");
    double prev = 0.0;
    for (const auto& e : events) {
      if (!(e.t > prev) || !(e.t < t_end))
        throw InvalidModel("event times must be strictly increasing inside (0, t_end)");
      prev = e.t;
    }
  }
};

struct Tolerances {
  double rtol = 1e-8;
  double atol = 1e-10;
  double sample_dt = 0.01;
  double max_step = 0.0;  // 0: unlimited
};

enum class Classification { converged, limit_cycle, diverged };

inline const char* to_string(Classification c) {
  switch (c) {
    case Classification::converged: return "converged";
    case Classification::limit_cycle: return "limit-cycle";
    default: return "diverged";
  }
}

struct Trajectory {
  std::vector<double> times;
  std::vector<SystemState> states;
  std::vector<double> residuals;    // stationarity residual per sample
  std::vector<double> event_times;  // segment boundaries between 0 and t_end
  std::optional<std::size_t> slack;
  bool integration_failed = false;
  std::string failure;
  Classification classification = Classification::converged;
  double final_residual = 0.0;
};

/// Distance from stationarity in lab coordinates: largest |d omega/dt|,
/// |dE/dt| and frequency mismatch (to the slack, or to node 0 without one).
inline double stationarity_residual(const Model& m, const SystemState& x) {
  const SystemState dx = vector_field(m, x);
  double r = std::max(dx.omega.cwiseAbs().maxCoeff(), dx.E.cwiseAbs().maxCoeff());
  const double ref = m.slack ? 0.0 : x.omega(0);
  for (auto j : m.dynamic_nodes()) r = std::max(r, std::abs(x.omega(static_cast<Eigen::Index>(j)) - ref));
  return r;
}

namespace detail {

struct Dopri5 {
  // Butcher tableau and dense-output weights of the 5(4) pair.
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                          a75 = -2187.0 / 6784, a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  static constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                          d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                          d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;
};

// Continuous extension of one accepted step on [t0, t0 + h].
struct DenseStep {
  double t0 = 0.0, h = 0.0;
  Vector r1, r2, r3, r4, r5;

  Vector at(double t) const {
    const double th = (t - t0) / h, th1 = 1.0 - th;
    return r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
  }
};

inline bool blown_up(const Vector& y, Eigen::Index n) {
  if (!y.allFinite()) return true;
  return y.segment(n, n).cwiseAbs().maxCoeff() > 1e3 || y.tail(n).cwiseAbs().maxCoeff() > 1e3;
}

}  // namespace detail

inline Classification classify(const Trajectory& tr, double window);

/// Integrates from `init` over the schedule.  Samples are taken every
/// sample_dt plus at each event time and at t_end.  Blow-up (|E| or
/// |omega| > 1e3) or step-size underflow stop the run early and mark it
/// diverged.
inline Trajectory integrate(System sys, const SystemState& init, const Schedule& sched,
                            const Tolerances& tol = {}) {
  sched.validate();
  if (!(tol.sample_dt > 0.0)) throw InvalidModel("sample_dt must be positive");
  if (!(tol.rtol > 0.0) || !(tol.atol > 0.0)) throw InvalidModel("tolerances must be positive");
  {
    // Reject bad paths or values before spending time on integration.
    System probe = sys;
    for (const auto& e : sched.events) probe.set(e.path, e.value);
    probe.materialize();
  }
  Model m = sys.materialize();
  init.validate(m.size());
  const auto n = static_cast<Eigen::Index>(m.size());

  Trajectory tr;
  tr.slack = m.slack ? std::optional<std::size_t>(m.slack->node) : std::nullopt;
  for (const auto& e : sched.events) tr.event_times.push_back(e.t);

  auto f = [&](const Vector& y) { return pack(vector_field(m, unpack(y))); };
  auto record = [&](double t, const Vector& y) {
    tr.times.push_back(t);
    tr.states.push_back(unpack(y));
    tr.residuals.push_back(stationarity_residual(m, tr.states.back()));
  };

  using D = detail::Dopri5;
  Vector y = pack(init);
  if (m.slack) {
    const auto k = static_cast<Eigen::Index>(m.slack->node);
    y(k) = 0.0;
    y(n + k) = 0.0;
    y(2 * n + k) = m.slack->voltage;
  }
  double t = 0.0;
  record(t, y);
  std::size_t sample_k = 1;
  double next_sample = tol.sample_dt;

  std::vector<double> bounds = tr.event_times;
  bounds.push_back(sched.t_end);
  std::size_t next_event = 0;

  for (double seg_end : bounds) {
    // Starting step: a fraction of the fastest controller time constant.
    double h = std::min(1e-3 * m.params.tau.minCoeff(), seg_end - t);
    Vector k1 = f(y);
    while (t < seg_end) {
      if (h < 1e-14 * std::max(1.0, std::abs(t))) {
        tr.integration_failed = true;
        tr.failure = "step size underflow at t = " + std::to_string(t);
        break;
      }
      if (tol.max_step > 0.0) h = std::min(h, tol.max_step);
      const bool last = t + h >= seg_end;
      const double hs = last ? seg_end - t : h;
      const Vector k2 = f(y + hs * D::a21 * k1);
      const Vector k3 = f(y + hs * (D::a31 * k1 + D::a32 * k2));
      const Vector k4 = f(y + hs * (D::a41 * k1 + D::a42 * k2 + D::a43 * k3));
      const Vector k5 = f(y + hs * (D::a51 * k1 + D::a52 * k2 + D::a53 * k3 + D::a54 * k4));
      const Vector k6 =
          f(y + hs * (D::a61 * k1 + D::a62 * k2 + D::a63 * k3 + D::a64 * k4 + D::a65 * k5));
      const Vector y1 =
          y + hs * (D::a71 * k1 + D::a73 * k3 + D::a74 * k4 + D::a75 * k5 + D::a76 * k6);
      const Vector k7 = f(y1);
      const Vector err =
          hs * (D::e1 * k1 + D::e3 * k3 + D::e4 * k4 + D::e5 * k5 + D::e6 * k6 + D::e7 * k7);
      Vector scale = (tol.atol + tol.rtol * y.cwiseAbs().cwiseMax(y1.cwiseAbs()).array()).matrix();
      // Angles are weighted in absolute radians so that the step sequence
      // does not depend on a global phase shift.
      scale.head(n).setConstant(tol.atol + tol.rtol);
      double en = std::sqrt((err.cwiseQuotient(scale)).squaredNorm() / static_cast<double>(err.size()));
      if (!std::isfinite(en)) en = 1e10;
      if (en <= 1.0) {
        detail::DenseStep ds;
        ds.t0 = t;
        ds.h = hs;
        ds.r1 = y;
        ds.r2 = y1 - y;
        ds.r3 = hs * k1 - ds.r2;
        ds.r4 = ds.r2 - hs * k7 - ds.r3;
        ds.r5 = hs * (D::d1 * k1 + D::d3 * k3 + D::d4 * k4 + D::d5 * k5 + D::d6 * k6 + D::d7 * k7);
        const double t1 = last ? seg_end : t + hs;
        while (next_sample < t1 - 1e-12 * std::max(1.0, t1)) {
          record(next_sample, ds.at(next_sample));
          next_sample = static_cast<double>(++sample_k) * tol.sample_dt;
        }
        t = t1;
        y = y1;
        k1 = k7;
        if (detail::blown_up(y, n)) {
          record(t, y);
          tr.classification = Classification::diverged;
          tr.failure = "state left the bounded region at t = " + std::to_string(t);
          tr.final_residual = tr.residuals.back();
          return tr;
        }
      }
      const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      h = hs * (en <= 1.0 ? fac : std::min(fac, 1.0));
    }
    if (tr.integration_failed) break;
    // Segment boundary: sample exactly here, then apply the parameter step.
    if (tr.times.back() < t - 1e-12 * std::max(1.0, t)) record(t, y);
    if (std::abs(next_sample - t) <= 1e-9 * std::max(1.0, t))
      next_sample = static_cast<double>(++sample_k) * tol.sample_dt;
    if (next_event < sched.events.size()) {
      const auto& e = sched.events[next_event++];
      sys.set(e.path, e.value);
      m = sys.materialize();
    }
  }
  tr.final_residual = tr.residuals.back();
  tr.classification = classify(tr, std::min(5.0, tr.times.back() / 3.0));
  return tr;
}

/// Index range [first, last) of the samples in [t0, t1].
inline std::pair<std::size_t, std::size_t> sample_range(const Trajectory& tr, double t0, double t1) {
  const double eps = 1e-9 * std::max(1.0, std::abs(t1));
  const auto lo = std::lower_bound(tr.times.begin(), tr.times.end(), t0 - eps);
  const auto hi = std::upper_bound(tr.times.begin(), tr.times.end(), t1 + eps);
  return {static_cast<std::size_t>(lo - tr.times.begin()),
          static_cast<std::size_t>(hi - tr.times.begin())};
}

namespace detail {

// Gauge-fixed view of a sample: angles relative to the slack (or node 0).
inline Vector gauge_fixed(const SystemState& s, std::optional<std::size_t> slack) {
  const double ref = s.delta(static_cast<Eigen::Index>(slack.value_or(0)));
  Vector v(3 * s.delta.size());
  v << (s.delta.array() - ref).matrix(), s.omega, s.E;
  return v;
}

}  // namespace detail

/// Largest peak-to-peak excursion of any gauge-fixed component over the
/// samples [first, last).
inline double trajectory_amplitude(const Trajectory& tr, std::size_t first, std::size_t last) {
  if (last <= first) return 0.0;
  Vector lo = detail::gauge_fixed(tr.states[first], tr.slack), hi = lo;
  for (std::size_t i = first + 1; i < last; ++i) {
    const Vector v = detail::gauge_fixed(tr.states[i], tr.slack);
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return (hi - lo).maxCoeff();
}

/// Trichotomy on the samples in [t0, t1] using the last window.  Bounded
/// trajectories that do not settle are reported as limit cycles.
inline Classification classify(const Trajectory& tr, double window, double t0, double t1) {
  const auto [first, last] = sample_range(tr, t0, t1);
  if (last <= first) return Classification::diverged;
  const bool failed_here = tr.integration_failed || tr.times[last - 1] < t1 - 1e-9 * std::max(1.0, t1);
  for (std::size_t i = first; i < last; ++i) {
    const auto& s = tr.states[i];
    if (!s.E.allFinite() || !s.omega.allFinite() || s.E.cwiseAbs().maxCoeff() > 1e3 ||
        s.omega.cwiseAbs().maxCoeff() > 1e3)
      return Classification::diverged;
  }
  if (failed_here) return Classification::diverged;
  const double tend = tr.times[last - 1];
  const auto [w1a, w1b] = sample_range(tr, std::max(t0, tend - window), tend);
  const double amp_last = trajectory_amplitude(tr, w1a, w1b);
  if (tr.residuals[last - 1] < 1e-6 && amp_last < 1e-6) return Classification::converged;
  // Slow decay and drift fall back to the same label.
  return Classification::limit_cycle;
}

inline Classification classify(const Trajectory& tr, double window) {
  return classify(tr, window, tr.times.front(), tr.times.back());
}

/// Classification of each segment between consecutive events.
inline std::vector<Classification> classify_segments(const Trajectory& tr, double window) {
  std::vector<double> b{0.0};
  b.insert(b.end(), tr.event_times.begin(), tr.event_times.end());
  b.push_back(tr.times.back());
  std::vector<Classification> out;
  for (std::size_t i = 0; i + 1 < b.size(); ++i) {
    if (b[i] > tr.times.back()) {
      out.push_back(Classification::diverged);
      continue;
    }
    const double w = std::min(window, (b[i + 1] - b[i]) / 3.0);
    out.push_back(classify(tr, w, b[i], b[i + 1]));
  }
  return out;
}

}  // namespace droopstab
