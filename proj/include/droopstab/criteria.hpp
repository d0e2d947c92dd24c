#pragma once

// Explicit stability and instability conditions for lossless grids.  Every
// criterion reports a verdict and a signed margin: satisfied <=> margin > 0.
//
// Two exact tests come from block elimination of the reduced Jacobian
//   Xi = [[-Lambda, A^T], [A, H~]]:
//   I:  Lambda > 0 on the angle subspace and H~ + A Lambda^+ A^T < 0
//   II: H~ < 0 and Lambda + A^T H~^-1 A > 0 on the angle subspace
// The remaining ones are cheaper relaxations (Gershgorin bounds, norm
// bounds, subset trial vectors).

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "droopstab/linearization.hpp"

namespace droopstab {

enum class CriterionKind { sufficient_for_stability, necessary_for_stability,
                           sufficient_for_instability, exact };
enum class CriterionVerdict { satisfied, violated, not_applicable };

inline const char* to_string(CriterionKind k) {
  switch (k) {
    case CriterionKind::sufficient_for_stability: return "sufficient-for-stability";
    case CriterionKind::necessary_for_stability: return "necessary-for-stability";
    case CriterionKind::sufficient_for_instability: return "sufficient-for-instability";
    default: return "exact";
  }
}

inline const char* to_string(CriterionVerdict v) {
  switch (v) {
    case CriterionVerdict::satisfied: return "satisfied";
    case CriterionVerdict::violated: return "violated";
    default: return "not-applicable";
  }
}

/// CSV encoding: 1 satisfied, 0 violated, -1 not applicable.
inline int verdict_code(CriterionVerdict v) {
  return v == CriterionVerdict::satisfied ? 1 : v == CriterionVerdict::violated ? 0 : -1;
}

struct CriterionResult {
  std::string name;
  CriterionKind kind = CriterionKind::exact;
  CriterionVerdict verdict = CriterionVerdict::not_applicable;
  double margin = std::numeric_limits<double>::quiet_NaN();
  Vector detail;  // per-node margins for nodewise criteria
  std::string note;

  bool satisfied() const { return verdict == CriterionVerdict::satisfied; }
};

namespace detail {

inline CriterionResult judged(std::string name, CriterionKind kind, double margin,
                              Vector detail = {}, std::string note = {}) {
  CriterionResult r{std::move(name), kind,
                    margin > 0.0 ? CriterionVerdict::satisfied : CriterionVerdict::violated,
                    margin, std::move(detail), std::move(note)};
  return r;
}

inline CriterionResult not_applicable(std::string name, CriterionKind kind, std::string note) {
  return {std::move(name), kind, CriterionVerdict::not_applicable,
          std::numeric_limits<double>::quiet_NaN(), {}, std::move(note)};
}

}  // namespace detail

/// Spectral quantities of Lambda used by several criteria.  In free mode
/// lambda2 is the smallest eigenvalue of Lambda restricted to the
/// complement of the all-ones vector; with a slack it is the smallest
/// eigenvalue of Lambda itself (no zero mode).
struct SpectralAux {
  double lambda2 = 0.0;
  Vector fiedler;
  Matrix Lambda_pinv;
  double norm_A = 0.0;
  double norm_AT = 0.0;
  double norm_AT_Hinv_A = std::numeric_limits<double>::quiet_NaN();
  bool H_tilde_invertible = false;
  bool connected = false;  // lambda2 above the definiteness threshold
};

inline SpectralAux spectral_aux(const LinearizedSystem& lin) {
  SpectralAux aux;
  const auto n = lin.size();
  const Matrix Q = lin.anchored ? Matrix(Matrix::Identity(n, n))
                                : linalg::complement_basis(n, n);
  const Matrix P = Q.transpose() * lin.Lambda * Q;
  if (P.rows() > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (P + P.transpose()));
    aux.lambda2 = es.eigenvalues()(0);
    aux.fiedler = Q * es.eigenvectors().col(0);
    aux.fiedler.normalize();
  } else {
    aux.lambda2 = std::numeric_limits<double>::infinity();
    aux.fiedler = Vector::Zero(n);
  }
  aux.connected = aux.lambda2 > kDefinitenessTol;
  aux.Lambda_pinv = linalg::pseudo_inverse(lin.Lambda);
  aux.norm_A = linalg::spectral_norm(lin.A);
  aux.norm_AT = linalg::spectral_norm(lin.A.transpose());

  Eigen::FullPivLU<Matrix> lu(lin.H_tilde);
  lu.setThreshold(1e-12);
  aux.H_tilde_invertible = n == 0 || lu.isInvertible();
  if (aux.H_tilde_invertible && n > 0)
    aux.norm_AT_Hinv_A = linalg::spectral_norm(lin.A.transpose() * lu.solve(lin.A));
  return aux;
}

/// cos(delta_j - delta_l) > 0 on every line; makes Lambda a proper
/// Laplacian.  Lines to the slack count.
inline CriterionResult angle_condition(const Equilibrium& eq, const GridNetwork& net) {
  double margin = std::numeric_limits<double>::infinity();
  for (auto [j, l] : net.couplings()) {
    const auto a = static_cast<Eigen::Index>(j), b = static_cast<Eigen::Index>(l);
    margin = std::min(margin, std::cos(eq.state.delta(a) - eq.state.delta(b)));
  }
  if (!std::isfinite(margin)) margin = 1.0;  // a single node has no lines
  return detail::judged("angle", CriterionKind::sufficient_for_stability, margin, {},
                        "sufficient for the isolated angle subsystem only");
}

inline CriterionResult lemma2_I(const LinearizedSystem& lin, const SpectralAux& aux) {
  if (lin.size() == 0) return detail::judged("lemma2_I", CriterionKind::exact, 1.0);
  const Matrix S = lin.H_tilde + lin.A * aux.Lambda_pinv * lin.A.transpose();
  const double top = linalg::max_eigenvalue(0.5 * (S + S.transpose()));
  const double margin = std::min(aux.lambda2, -top);
  std::string note;
  if (!(aux.lambda2 > 0.0)) note = "angle block not positive definite";
  else if (!(top < 0.0)) note = "coupled voltage block not negative definite";
  return detail::judged("lemma2_I", CriterionKind::exact, margin, {}, note);
}

inline CriterionResult lemma2_II(const LinearizedSystem& lin, const SpectralAux& aux) {
  if (lin.size() == 0) return detail::judged("lemma2_II", CriterionKind::exact, 1.0);
  if (!aux.H_tilde_invertible)
    return detail::not_applicable("lemma2_II", CriterionKind::exact, "H~ is singular");
  const double htop = linalg::max_eigenvalue(lin.H_tilde);
  if (!(htop < 0.0))
    return detail::judged("lemma2_II", CriterionKind::exact, -htop, {},
                          "voltage block not negative definite");
  const Matrix M = lin.Lambda + lin.A.transpose() * lin.H_tilde.ldlt().solve(lin.A);
  const Matrix P = project(0.5 * (M + M.transpose()), angle_subspace(lin));
  const double low = P.rows() ? linalg::min_eigenvalue(P) : std::numeric_limits<double>::infinity();
  const double margin = std::min(-htop, low);
  return detail::judged("lemma2_II", CriterionKind::exact, margin, {},
                        low > 0.0 ? "" : "coupled angle block not positive definite");
}

namespace detail {

// Node-wise sums over every line of dynamic node j, slack lines included:
//   coupling_sum = sum_{l != j} B_jl,  weighted = sum_{l != j} B_jl (E_j + E_l)
// plus 2 E_j s_j for a shunt susceptance s_j.
struct NodeSums {
  Vector coupling;
  Vector weighted;
  Vector shunt;
};

inline NodeSums node_sums(const Equilibrium& eq, const GridNetwork& net,
                          const LinearizedSystem& lin) {
  const auto nd = lin.size();
  NodeSums s{Vector::Zero(nd), Vector::Zero(nd), Vector::Zero(nd)};
  const Matrix& B = net.susceptance();
  const Vector& E = eq.state.E;
  for (Eigen::Index r = 0; r < nd; ++r) {
    const auto j = static_cast<Eigen::Index>(lin.nodes[static_cast<std::size_t>(r)]);
    for (Eigen::Index l = 0; l < B.cols(); ++l) {
      if (l == j) continue;
      s.coupling(r) += B(j, l);
      s.weighted(r) += B(j, l) * (E(j) + E(l));
    }
    s.shunt(r) = 2.0 * E(j) * net.shunt_susceptance(static_cast<std::size_t>(j));
  }
  return s;
}

}  // namespace detail

/// Gershgorin bound: 1/chi_j > sum_l B_jl (E_j + E_l) for all j, given the
/// angle condition, implies H~ < 0.
inline CriterionResult cor1_voltage(const Equilibrium& eq, const GridNetwork& net,
                                    const LinearizedSystem& lin) {
  if (!angle_condition(eq, net).satisfied())
    return detail::not_applicable("cor1", CriterionKind::sufficient_for_stability,
                                  "angle condition fails");
  const auto s = detail::node_sums(eq, net, lin);
  const Vector per_node = lin.chi.cwiseInverse() - s.weighted - s.shunt;
  const double margin = per_node.size() ? per_node.minCoeff() : 1.0;
  return detail::judged("cor1", CriterionKind::sufficient_for_stability, margin, per_node,
                        "sufficient for H~ < 0");
}

enum class SubsetPolicy { automatic, exhaustive, sampled };

/// Trial vectors 1_S: if sum_{j in S} 1/(chi_j E_j) <= sum_{j,l in S} H_jl for
/// some S, H~ is not negative definite and the point is unstable.  The
/// margin is max_S 1_S^T H~ 1_S; the certificate requires it to be > 0.
inline CriterionResult cor2_instability(const LinearizedSystem& lin,
                                        SubsetPolicy policy = SubsetPolicy::automatic,
                                        std::uint64_t seed = 0) {
  const auto n = lin.size();
  if (n == 0)
    return detail::not_applicable("cor2", CriterionKind::sufficient_for_instability, "no nodes");
  const Matrix& Ht = lin.H_tilde;
  const bool exhaustive = policy == SubsetPolicy::exhaustive ||
                          (policy == SubsetPolicy::automatic && n <= 15);
  double best = -std::numeric_limits<double>::infinity();
  std::string note;
  if (exhaustive) {
    if (n > 30) throw std::invalid_argument("exhaustive subset search limited to 30 nodes");
    // Gray-code walk: one membership flip per step, O(n) update of 1_S^T H~ 1_S.
    std::vector<bool> in(static_cast<std::size_t>(n), false);
    Vector row_sum = Vector::Zero(n);  // H~ 1_S
    double value = 0.0;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t k = 1; k < total; ++k) {
      const auto i = static_cast<Eigen::Index>(std::countr_zero(k));
      const double sign = in[static_cast<std::size_t>(i)] ? -1.0 : 1.0;
      in[static_cast<std::size_t>(i)] = !in[static_cast<std::size_t>(i)];
      value += sign * 2.0 * row_sum(i) + Ht(i, i);
      row_sum += sign * Ht.col(i);
      best = std::max(best, value);
    }
    note = "all " + std::to_string(total - 1) + " subsets";
  } else {
    for (Eigen::Index i = 0; i < n; ++i) best = std::max(best, Ht(i, i));
    best = std::max(best, Ht.sum());
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    for (int t = 0; t < 1000; ++t) {
      Vector x = Vector::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) x(i) = coin(rng) ? 1.0 : 0.0;
      if (x.sum() == 0.0) continue;
      best = std::max(best, x.dot(Ht * x));
    }
    note = "singletons, full set and 1000 random subsets";
  }
  return detail::judged("cor2", CriterionKind::sufficient_for_instability, best, {}, note);
}

/// Leading-order necessary condition
/// lambda2 > sum_j chi_j E_j (A v_F)_j^2; diagnostic only.
inline CriterionResult cor3_necessary(const LinearizedSystem& lin, const SpectralAux& aux) {
  const Vector Av = lin.A * aux.fiedler;
  const double rhs = (lin.chi.array() * lin.E.array() * Av.array().square()).sum();
  return detail::judged("cor3", CriterionKind::necessary_for_stability, aux.lambda2 - rhs, {},
                        "leading order in chi; diagnostic");
}

/// lambda2 > 0 and 1/chi_j > sum_l B_jl + E_j ||A|| ||A^T|| / lambda2, with
/// the sum over the lines of node j.
inline CriterionResult cor4_sufficient(const Equilibrium& eq, const GridNetwork& net,
                                       const LinearizedSystem& lin, const SpectralAux& aux) {
  if (!(aux.lambda2 > 0.0))
    return detail::judged("cor4", CriterionKind::sufficient_for_stability, aux.lambda2, {},
                          "algebraic connectivity not positive");
  const auto s = detail::node_sums(eq, net, lin);
  const double coupling = aux.norm_A * aux.norm_AT / aux.lambda2;
  const Vector per_node =
      lin.chi.cwiseInverse() - s.coupling - s.shunt - coupling * lin.E;
  const double margin = std::min(aux.lambda2, per_node.size() ? per_node.minCoeff() : 1.0);
  return detail::judged("cor4", CriterionKind::sufficient_for_stability, margin, per_node);
}

/// Given H~ < 0: lambda2 > ||A^T H~^-1 A|| implies stability.
inline CriterionResult cor5_sufficient(const LinearizedSystem& lin, const SpectralAux& aux) {
  if (!aux.H_tilde_invertible)
    return detail::not_applicable("cor5", CriterionKind::sufficient_for_stability,
                                  "H~ is singular");
  if (lin.size() > 0 && !(linalg::max_eigenvalue(lin.H_tilde) < -kDefinitenessTol))
    return detail::not_applicable("cor5", CriterionKind::sufficient_for_stability,
                                  "H~ is not negative definite");
  const double bound = lin.size() ? aux.norm_AT_Hinv_A : 0.0;
  return detail::judged("cor5", CriterionKind::sufficient_for_stability, aux.lambda2 - bound);
}

/// Factors of Xi = U^T S U with U = [[I, -Lambda^+ A^T], [0, I]] and
/// S = diag(-Lambda, H~ + A Lambda^+ A^T).
struct SchurDecomposition {
  Matrix U;
  Matrix S;
};

inline SchurDecomposition schur_decomposition(const LinearizedSystem& lin, const SpectralAux& aux) {
  const auto n = lin.size();
  SchurDecomposition d{Matrix::Identity(2 * n, 2 * n), Matrix::Zero(2 * n, 2 * n)};
  d.U.block(0, n, n, n) = -aux.Lambda_pinv * lin.A.transpose();
  d.S.block(0, 0, n, n) = -lin.Lambda;
  d.S.block(n, n, n, n) = lin.H_tilde + lin.A * aux.Lambda_pinv * lin.A.transpose();
  return d;
}

struct CriteriaReport {
  SpectralAux aux;
  std::vector<CriterionResult> results;

  const CriterionResult* find(const std::string& name) const {
    for (const auto& r : results)
      if (r.name == name) return &r;
    return nullptr;
  }
};

/// Evaluates every criterion at a lossless equilibrium.
inline CriteriaReport evaluate_all(const Equilibrium& eq, const Model& m,
                                   const LinearizedSystem& lin, std::uint64_t seed = 0) {
  CriteriaReport rep;
  rep.aux = spectral_aux(lin);
  rep.results.push_back(angle_condition(eq, m.net));
  rep.results.push_back(lemma2_I(lin, rep.aux));
  rep.results.push_back(lemma2_II(lin, rep.aux));
  rep.results.push_back(cor1_voltage(eq, m.net, lin));
  rep.results.push_back(cor2_instability(lin, SubsetPolicy::automatic, seed));
  rep.results.push_back(cor3_necessary(lin, rep.aux));
  rep.results.push_back(cor4_sufficient(eq, m.net, lin, rep.aux));
  rep.results.push_back(cor5_sufficient(lin, rep.aux));
  return rep;
}

inline CriteriaReport evaluate_all(const Equilibrium& eq, const Model& m, std::uint64_t seed = 0) {
  return evaluate_all(eq, m, build_linearization(eq, m), seed);
}

}  // namespace droopstab
