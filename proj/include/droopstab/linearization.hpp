#pragma once

// Linearization of the lossless dynamics around an equilibrium.  With
// perturbations (xi, nu, eps) of (delta, omega, E) on the dynamic nodes:
//   d xi/dt      = nu
//   tau d nu/dt  = -nu - K Lambda xi + K A^T eps
//   tau d eps/dt = X E (A xi + H~ eps),       H~ = H - X^-1 E^-1
// With a slack node every matrix is the principal block on the dynamic
// nodes; couplings to the slack still enter the diagonals.

#include <complex>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "droopstab/equilibrium.hpp"
#include "droopstab/linalg.hpp"

namespace droopstab {

struct LinearizedSystem {
  Matrix Lambda;
  Matrix A;
  Matrix H;
  Matrix H_tilde;
  Vector E;  // equilibrium voltages of the dynamic nodes
  Vector tau;
  Vector kappa;
  Vector chi;
  bool anchored = false;           // slack present: no zero mode
  std::vector<std::size_t> nodes;  // dynamic node of each row

  Eigen::Index size() const { return Lambda.rows(); }
};

/// Builds Lambda, A, H and H~ at `eq`.  Only lossless networks are supported.
inline LinearizedSystem build_linearization(const Equilibrium& eq, const Model& m) {
  m.validate();
  if (!m.net.lossless())
    throw InvalidModel("stability analysis is only defined for lossless networks");
  if (eq.slack.has_value() != m.slack.has_value() ||
      (eq.slack && *eq.slack != m.slack->node))
    throw InvalidModel("equilibrium and model disagree on the slack node");
  eq.state.validate(m.size());

  const auto n = static_cast<Eigen::Index>(m.size());
  const Matrix& B = m.net.susceptance();
  const Vector& d = eq.state.delta;
  const Vector& E = eq.state.E;
  Matrix L = Matrix::Zero(n, n), A = Matrix::Zero(n, n), H = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    H(j, j) = 2.0 * B(j, j);
    for (Eigen::Index l = 0; l < n; ++l) {
      if (l == j || B(j, l) == 0.0) continue;
      const double c = std::cos(d(l) - d(j)), s = std::sin(d(l) - d(j));
      L(j, l) = -E(j) * E(l) * B(j, l) * c;
      L(j, j) += E(j) * E(l) * B(j, l) * c;
      A(j, l) = -E(l) * B(j, l) * s;
      A(j, j) += E(l) * B(j, l) * s;
      H(j, l) = B(j, l) * c;
      H(j, j) += B(j, l) * c * E(l) / E(j);
    }
  }

  LinearizedSystem lin;
  lin.nodes = m.dynamic_nodes();
  lin.anchored = m.slack.has_value();
  const auto nd = static_cast<Eigen::Index>(lin.nodes.size());
  std::vector<Eigen::Index> idx(lin.nodes.begin(), lin.nodes.end());
  auto sub = [&](const Matrix& M) {
    Matrix S(nd, nd);
    for (Eigen::Index r = 0; r < nd; ++r)
      for (Eigen::Index c = 0; c < nd; ++c) S(r, c) = M(idx[r], idx[c]);
    return S;
  };
  auto subv = [&](const Vector& v) {
    Vector s(nd);
    for (Eigen::Index r = 0; r < nd; ++r) s(r) = v(idx[r]);
    return s;
  };
  lin.Lambda = sub(L);
  lin.A = sub(A);
  lin.H = sub(H);
  lin.E = subv(E);
  lin.tau = subv(m.params.tau);
  lin.kappa = subv(m.params.kappa);
  lin.chi = subv(m.params.chi);
  lin.H_tilde = lin.H;
  lin.H_tilde.diagonal() -= (lin.chi.array() * lin.E.array()).inverse().matrix();
  return lin;
}

/// The 3n x 3n Jacobian in (xi, nu, eps) coordinates.
inline Matrix full_jacobian(const LinearizedSystem& lin) {
  const auto n = lin.size();
  const Vector inv_tau = lin.tau.cwiseInverse();
  const Vector k_t = lin.kappa.cwiseProduct(inv_tau);
  const Vector xe_t = lin.chi.cwiseProduct(lin.E).cwiseProduct(inv_tau);
  Matrix J = Matrix::Zero(3 * n, 3 * n);
  J.block(0, n, n, n).setIdentity();
  J.block(n, 0, n, n) = -(k_t.asDiagonal() * lin.Lambda);
  J.block(n, n, n, n) = -Matrix(inv_tau.asDiagonal());
  J.block(n, 2 * n, n, n) = k_t.asDiagonal() * lin.A.transpose();
  J.block(2 * n, 0, n, n) = xe_t.asDiagonal() * lin.A;
  J.block(2 * n, 2 * n, n, n) = xe_t.asDiagonal() * lin.H_tilde;
  return J;
}

/// Symmetric 2n x 2n matrix [[-Lambda, A^T], [A, H~]] acting on (xi, eps).
inline Matrix reduced_jacobian(const LinearizedSystem& lin) {
  const auto n = lin.size();
  Matrix X(2 * n, 2 * n);
  X << -lin.Lambda, lin.A.transpose(), lin.A, lin.H_tilde;
  const double asym = linalg::max_abs(X - X.transpose());
  if (asym > 1e-12 * (1.0 + linalg::max_abs(X)))
    throw std::logic_error("reduced Jacobian is not symmetric (deviation " +
                           std::to_string(asym) + ")");
  return X;
}

enum class StabilityMode { anchored, free };
enum class Verdict { stable, unstable, marginal };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::stable: return "stable";
    case Verdict::unstable: return "unstable";
    default: return "marginal";
  }
}

struct StabilityReport {
  Eigen::VectorXcd eigenvalues;
  std::complex<double> dominant{0.0, 0.0};
  Verdict verdict = Verdict::marginal;
  bool zero_mode_excluded = false;
  std::string diagnostic;
};

inline constexpr double kStabilityMargin = 1e-9;
inline constexpr double kZeroModeTol = 1e-8;

/// Linear stability from the spectrum of J.  Free mode drops the eigenvalue
/// of the global phase shift; anything unusual about it yields `marginal`.
inline StabilityReport eigen_stability(const Matrix& J, StabilityMode mode) {
  if (J.rows() != J.cols()) throw std::invalid_argument("Jacobian must be square");
  StabilityReport rep;
  if (J.rows() == 0) {
    rep.verdict = Verdict::stable;
    rep.dominant = {-std::numeric_limits<double>::infinity(), 0.0};
    return rep;
  }
  Eigen::EigenSolver<Matrix> es(J, false);
  rep.eigenvalues = es.eigenvalues();
  const auto m = rep.eigenvalues.size();
  std::vector<bool> keep(static_cast<std::size_t>(m), true);

  if (mode == StabilityMode::free) {
    Eigen::Index nearest = 0;
    int near_zero = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::abs(rep.eigenvalues(i)) < std::abs(rep.eigenvalues(nearest))) nearest = i;
      if (std::abs(rep.eigenvalues(i)) < kZeroModeTol) ++near_zero;
    }
    keep[static_cast<std::size_t>(nearest)] = false;
    rep.zero_mode_excluded = true;
    if (near_zero == 0) {
      rep.diagnostic = "no eigenvalue within 1e-8 of zero; phase-shift mode not found";
    } else if (near_zero > 1) {
      rep.diagnostic = std::to_string(near_zero) +
                       " eigenvalues within 1e-8 of zero; manual review needed";
    }
  }

  bool first = true;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!keep[static_cast<std::size_t>(i)]) continue;
    const auto mu = rep.eigenvalues(i);
    if (first || mu.real() > rep.dominant.real() ||
        (mu.real() == rep.dominant.real() && mu.imag() > rep.dominant.imag())) {
      rep.dominant = mu;
      first = false;
    }
  }
  if (first) {
    rep.verdict = Verdict::stable;
    rep.dominant = {-std::numeric_limits<double>::infinity(), 0.0};
  } else if (rep.dominant.real() < -kStabilityMargin) {
    rep.verdict = Verdict::stable;
  } else if (rep.dominant.real() > kStabilityMargin) {
    rep.verdict = Verdict::unstable;
  } else {
    rep.verdict = Verdict::marginal;
  }
  if (!rep.diagnostic.empty() && rep.verdict != Verdict::unstable) rep.verdict = Verdict::marginal;
  return rep;
}

inline StabilityReport eigen_stability(const LinearizedSystem& lin) {
  return eigen_stability(full_jacobian(lin),
                         lin.anchored ? StabilityMode::anchored : StabilityMode::free);
}

/// Subspaces on which quadratic forms are tested.  D1 is the complement of
/// the all-ones vector in R^n; D2 the complement of (1,...,1,0,...,0) in
/// R^{2n}.
enum class Subspace { D1, D2, full };
enum class Definiteness { negative_definite, negative_semidefinite_only, indefinite_or_positive };

inline const char* to_string(Definiteness d) {
  switch (d) {
    case Definiteness::negative_definite: return "negative-definite";
    case Definiteness::negative_semidefinite_only: return "negative-semidefinite-only";
    default: return "indefinite-or-positive";
  }
}

inline constexpr double kDefinitenessTol = 1e-10;

/// Restriction Q^T M Q of M to the subspace (Q orthonormal).
inline Matrix project(const Matrix& M, Subspace s) {
  if (s == Subspace::full) return M;
  const auto m = M.rows();
  const auto k = s == Subspace::D1 ? m : m / 2;
  const Matrix Q = linalg::complement_basis(m, k);
  return Q.transpose() * M * Q;
}

inline Definiteness classify_negative(double max_eig) {
  if (max_eig < -kDefinitenessTol) return Definiteness::negative_definite;
  if (max_eig <= kDefinitenessTol) return Definiteness::negative_semidefinite_only;
  return Definiteness::indefinite_or_positive;
}

inline Definiteness definiteness_on_subspace(const Matrix& M, Subspace s) {
  const Matrix P = project(M, s);
  if (P.rows() == 0) return Definiteness::negative_definite;
  return classify_negative(linalg::max_eigenvalue(0.5 * (P + P.transpose())));
}

/// The subspace relevant for a system: zero-mode complement in free mode,
/// the whole space when a slack anchors the phases.
inline Subspace angle_subspace(const LinearizedSystem& lin) {
  return lin.anchored ? Subspace::full : Subspace::D1;
}
inline Subspace joint_subspace(const LinearizedSystem& lin) {
  return lin.anchored ? Subspace::full : Subspace::D2;
}

}  // namespace droopstab
