#pragma once

// Equilibria of a System together with their eigen-analysis and criteria.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "droopstab/criteria.hpp"
#include "droopstab/systems.hpp"

namespace droopstab {

struct PointAnalysis {
  Equilibrium eq;
  StabilityReport stability;
  CriteriaReport criteria;  // empty results when not requested
};

struct SystemAnalysis {
  Model model;
  std::vector<PointAnalysis> points;
  std::string solver_note;  // why no point was found, if so

  std::size_t n_stable() const {
    return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [](const auto& p) {
      return p.stability.verdict == Verdict::stable;
    }));
  }

  /// Point with the most negative dominant real part, or nullptr.
  const PointAnalysis* most_stable() const {
    const PointAnalysis* best = nullptr;
    for (const auto& p : points)
      if (!best || p.stability.dominant.real() < best->stability.dominant.real()) best = &p;
    return best;
  }
};

/// Single inverter: every admissible equilibrium.  Networks: the equilibrium
/// reached by Newton from the flat start, if any.  Solver non-convergence
/// is reported through `solver_note`, other errors propagate.
inline SystemAnalysis analyze(const System& sys, bool with_criteria, std::uint64_t seed = 0) {
  SystemAnalysis out;
  out.model = sys.materialize();
  std::vector<Equilibrium> eqs;
  if (sys.kind() == SystemKind::single_inverter) {
    eqs = single_inverter_equilibria(sys.single_effective());
    if (eqs.empty()) out.solver_note = "no admissible root of the voltage polynomial";
  } else {
    try {
      eqs.push_back(solve_newton(out.model));
    } catch (const SolverError& e) {
      out.solver_note = e.what();
    }
  }
  for (auto& eq : eqs) {
    PointAnalysis pa;
    const LinearizedSystem lin = build_linearization(eq, out.model);
    pa.stability = eigen_stability(lin);
    if (with_criteria) pa.criteria = evaluate_all(eq, out.model, lin, seed);
    pa.eq = std::move(eq);
    out.points.push_back(std::move(pa));
  }
  return out;
}

}  // namespace droopstab
