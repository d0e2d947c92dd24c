#pragma once

// Electrical network model: nodal susceptance/conductance matrices of a
// (Kron-reduced) grid and the AC power injections they produce.
//
// Sign convention: off-diagonal B[j,l] >= 0 is the coupling strength of line
// (j,l); the diagonal is B[j,j] = shunt_j - sum_{k != j} B[j,k].  Lossy
// conductances follow the admittance matrix, G[j,l] = -g_jl off the diagonal.

#include <cmath>
#include <complex>
#include <cstddef>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace droopstab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised for structurally invalid input (bad indices, non-positive
/// couplings, disconnected graphs, singular passive blocks, ...).
class InvalidModel : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Coupling {
  std::size_t from = 0;
  std::size_t to = 0;
  double b = 0.0;  // series susceptance magnitude, > 0
  double g = 0.0;  // series conductance, lossy networks only
};

struct Shunt {
  std::size_t node = 0;
  double b = 0.0;
  double g = 0.0;
};

class GridNetwork {
 public:
  GridNetwork() = default;

  /// Validates and wraps prebuilt matrices.  Throws InvalidModel when the
  /// invariants (symmetry, sign pattern, lossless => G == 0, connectivity)
  /// do not hold.
  static GridNetwork from_matrices(Matrix B, Matrix G, bool lossless) {
    GridNetwork net;
    net.B_ = std::move(B);
    net.G_ = std::move(G);
    net.lossless_ = lossless;
    net.validate();
    return net;
  }

  static GridNetwork from_susceptance(Matrix B) {
    Matrix G = Matrix::Zero(B.rows(), B.cols());
    return from_matrices(std::move(B), std::move(G), true);
  }

  std::size_t size() const { return static_cast<std::size_t>(B_.rows()); }
  const Matrix& susceptance() const { return B_; }
  const Matrix& conductance() const { return G_; }
  bool lossless() const { return lossless_; }

  /// Shunt susceptance recovered from the diagonal: B[j,j] + sum_{k!=j} B[j,k].
  double shunt_susceptance(std::size_t j) const {
    const auto jj = static_cast<Eigen::Index>(j);
    return B_.row(jj).sum();
  }

  /// Sum of the (positive) line couplings incident to node j.
  double coupling_sum(std::size_t j) const {
    const auto jj = static_cast<Eigen::Index>(j);
    return B_.row(jj).sum() - B_(jj, jj);
  }

  /// Network with every admittance multiplied by `factor` (> 0).
  GridNetwork scaled(double factor) const {
    if (!(factor > 0.0)) throw InvalidModel("network scale factor must be positive");
    GridNetwork out = *this;
    out.B_ *= factor;
    out.G_ *= factor;
    return out;
  }

  /// Indices (j, l), j < l, of every coupled pair.
  std::vector<std::pair<std::size_t, std::size_t>> couplings() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (Eigen::Index j = 0; j < B_.rows(); ++j)
      for (Eigen::Index l = j + 1; l < B_.cols(); ++l)
        if (B_(j, l) != 0.0 || G_(j, l) != 0.0)
          out.emplace_back(static_cast<std::size_t>(j), static_cast<std::size_t>(l));
    return out;
  }

  bool connected() const {
    const auto n = size();
    if (n == 0) return false;
    std::vector<bool> seen(n, false);
    std::queue<std::size_t> frontier;
    frontier.push(0);
    seen[0] = true;
    std::size_t count = 1;
    while (!frontier.empty()) {
      const auto j = frontier.front();
      frontier.pop();
      for (std::size_t l = 0; l < n; ++l) {
        const auto jj = static_cast<Eigen::Index>(j), ll = static_cast<Eigen::Index>(l);
        if (!seen[l] && l != j && (B_(jj, ll) != 0.0 || G_(jj, ll) != 0.0)) {
          seen[l] = true;
          ++count;
          frontier.push(l);
        }
      }
    }
    return count == n;
  }

 private:
  void validate() const {
    constexpr double kSymTol = 1e-12;
    if (B_.rows() != B_.cols() || G_.rows() != B_.rows() || G_.cols() != B_.cols())
      throw InvalidModel("susceptance and conductance must be square and of equal size");
    if (B_.rows() == 0) throw InvalidModel("network must have at least one node");
    if (!B_.allFinite() || !G_.allFinite()) throw InvalidModel("network matrices must be finite");
    if ((B_ - B_.transpose()).cwiseAbs().maxCoeff() > kSymTol)
      throw InvalidModel("susceptance matrix is not symmetric");
    if ((G_ - G_.transpose()).cwiseAbs().maxCoeff() > kSymTol)
      throw InvalidModel("conductance matrix is not symmetric");
    for (Eigen::Index j = 0; j < B_.rows(); ++j)
      for (Eigen::Index l = 0; l < B_.cols(); ++l)
        if (j != l && B_(j, l) < 0.0)
          throw InvalidModel("off-diagonal susceptance B[" + std::to_string(j) + "," +
                             std::to_string(l) + "] is negative");
    if (lossless_ && G_.cwiseAbs().maxCoeff() != 0.0)
      throw InvalidModel("lossless network must have an all-zero conductance matrix");
    if (!connected()) throw InvalidModel("network is not connected");
  }

  Matrix B_;
  Matrix G_;
  bool lossless_ = true;
};

/// Assembles the nodal matrices from a line list.  Parallel lines add up.
inline GridNetwork build_network(std::size_t n, std::span<const Coupling> lines,
                                 std::span<const Shunt> shunts, bool lossless) {
  if (n == 0) throw InvalidModel("network must have at least one node");
  const auto N = static_cast<Eigen::Index>(n);
  Matrix B = Matrix::Zero(N, N);
  Matrix G = Matrix::Zero(N, N);
  for (const auto& line : lines) {
    if (line.from >= n || line.to >= n)
      throw InvalidModel("line endpoint out of range");
    if (line.from == line.to) throw InvalidModel("self-loop line");
    if (!(line.b > 0.0) || !std::isfinite(line.b))
      throw InvalidModel("line susceptance must be positive");
    if (lossless && line.g != 0.0) throw InvalidModel("lossless network with line conductance");
    if (line.g < 0.0 || !std::isfinite(line.g)) throw InvalidModel("line conductance must be >= 0");
    const auto j = static_cast<Eigen::Index>(line.from), l = static_cast<Eigen::Index>(line.to);
    B(j, l) += line.b;
    B(l, j) += line.b;
    B(j, j) -= line.b;
    B(l, l) -= line.b;
    G(j, l) -= line.g;
    G(l, j) -= line.g;
    G(j, j) += line.g;
    G(l, l) += line.g;
  }
  for (const auto& s : shunts) {
    if (s.node >= n) throw InvalidModel("shunt node out of range");
    if (!std::isfinite(s.b) || !std::isfinite(s.g)) throw InvalidModel("shunt must be finite");
    if (lossless && s.g != 0.0) throw InvalidModel("lossless network with shunt conductance");
    const auto j = static_cast<Eigen::Index>(s.node);
    B(j, j) += s.b;
    G(j, j) += s.g;
  }
  return GridNetwork::from_matrices(std::move(B), std::move(G), lossless);
}

/// Eliminates passive constant-impedance nodes: the result is the Schur
/// complement Y_aa - Y_ap Y_pp^{-1} Y_pa of the complex admittance matrix,
/// expressed on the remaining (active) nodes in their original order.
inline GridNetwork kron_reduce(const GridNetwork& full, std::span<const std::size_t> passive) {
  const auto n = full.size();
  std::vector<bool> is_passive(n, false);
  for (auto p : passive) {
    if (p >= n) throw InvalidModel("passive node index out of range");
    if (is_passive[p]) throw InvalidModel("duplicate passive node");
    is_passive[p] = true;
  }
  if (passive.empty()) return full;
  std::vector<Eigen::Index> act, pas;
  for (std::size_t j = 0; j < n; ++j)
    (is_passive[j] ? pas : act).push_back(static_cast<Eigen::Index>(j));
  if (act.empty()) throw InvalidModel("Kron reduction needs at least one active node");

  using CMatrix = Eigen::MatrixXcd;
  const CMatrix Y = full.conductance().cast<std::complex<double>>() +
                    std::complex<double>(0.0, 1.0) * full.susceptance().cast<std::complex<double>>();
  const auto na = static_cast<Eigen::Index>(act.size()), np = static_cast<Eigen::Index>(pas.size());
  CMatrix Yaa(na, na), Yap(na, np), Ypp(np, np);
  for (Eigen::Index i = 0; i < na; ++i) {
    for (Eigen::Index k = 0; k < na; ++k) Yaa(i, k) = Y(act[i], act[k]);
    for (Eigen::Index k = 0; k < np; ++k) Yap(i, k) = Y(act[i], pas[k]);
  }
  for (Eigen::Index i = 0; i < np; ++i)
    for (Eigen::Index k = 0; k < np; ++k) Ypp(i, k) = Y(pas[i], pas[k]);

  Eigen::FullPivLU<CMatrix> lu(Ypp);
  lu.setThreshold(1e-12);
  if (lu.rank() < np)
    throw InvalidModel(
        "passive block of the admittance matrix is singular: a passive island without a "
        "path to an active node or a grounding shunt cannot be eliminated");
  const CMatrix Yred = Yaa - Yap * lu.solve(Yap.transpose());

  Matrix B = Yred.imag();
  Matrix G = Yred.real();
  // Symmetrize round-off from the elimination.
  B = 0.5 * (B + B.transpose()).eval();
  G = 0.5 * (G + G.transpose()).eval();
  for (Eigen::Index j = 0; j < B.rows(); ++j)
    for (Eigen::Index l = 0; l < B.cols(); ++l)
      if (j != l && B(j, l) < 0.0 && B(j, l) > -1e-12) B(j, l) = 0.0;
  if (full.lossless()) G.setZero();
  return GridNetwork::from_matrices(std::move(B), std::move(G), full.lossless());
}

/// Phase angles (rad), frequency deviations (rad/s) and voltage magnitudes
/// (pu) of every node.
struct SystemState {
  Vector delta;
  Vector omega;
  Vector E;

  std::size_t size() const { return static_cast<std::size_t>(delta.size()); }

  static SystemState flat(std::size_t n, double voltage = 1.0) {
    const auto N = static_cast<Eigen::Index>(n);
    return {Vector::Zero(N), Vector::Zero(N), Vector::Constant(N, voltage)};
  }

  void validate(std::size_t n) const {
    const auto N = static_cast<Eigen::Index>(n);
    if (delta.size() != N || omega.size() != N || E.size() != N)
      throw InvalidModel("state dimension does not match the network");
    if (!delta.allFinite() || !omega.allFinite() || !E.allFinite())
      throw InvalidModel("state must be finite");
    if ((E.array() <= 0.0).any()) throw InvalidModel("voltage magnitudes must be positive");
  }
};

struct PowerInjections {
  Vector P;
  Vector Q;
};

/// Active and reactive power fed into the grid at every node.
inline PowerInjections power_injections(const SystemState& state, const GridNetwork& net) {
  const auto n = static_cast<Eigen::Index>(net.size());
  if (state.delta.size() != n || state.E.size() != n)
    throw InvalidModel("state dimension does not match the network");
  const Matrix& B = net.susceptance();
  const Matrix& G = net.conductance();
  const bool lossy = !net.lossless();
  PowerInjections out{Vector::Zero(n), Vector::Zero(n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    double p = 0.0, q = 0.0;
    for (Eigen::Index l = 0; l < n; ++l) {
      const double b = B(j, l);
      const double g = lossy ? G(j, l) : 0.0;
      if (b == 0.0 && g == 0.0) continue;
      const double d = state.delta(j) - state.delta(l);
      const double ee = state.E(j) * state.E(l);
      const double s = std::sin(d), c = std::cos(d);
      p += ee * (b * s + g * c);
      q += ee * (-b * c + g * s);
    }
    out.P(j) = p;
    out.Q(j) = q;
  }
  return out;
}

/// Partial derivatives of the injections with respect to angles and voltage
/// magnitudes; row j holds the derivatives of P_j (resp. Q_j).
struct PowerFlowJacobian {
  Matrix dP_ddelta;
  Matrix dP_dE;
  Matrix dQ_ddelta;
  Matrix dQ_dE;
};

inline PowerFlowJacobian power_flow_jacobian(const SystemState& state, const GridNetwork& net) {
  const auto n = static_cast<Eigen::Index>(net.size());
  const Matrix& B = net.susceptance();
  const Matrix& G = net.conductance();
  const bool lossy = !net.lossless();
  PowerFlowJacobian J{Matrix::Zero(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n),
                      Matrix::Zero(n, n)};
  const Vector& E = state.E;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index l = 0; l < n; ++l) {
      const double b = B(j, l);
      const double g = lossy ? G(j, l) : 0.0;
      if (b == 0.0 && g == 0.0) continue;
      const double d = state.delta(j) - state.delta(l);
      const double s = std::sin(d), c = std::cos(d);
      // Contributions of the E_l-weighted sum to the E_j derivatives.
      J.dP_dE(j, j) += E(l) * (b * s + g * c);
      J.dQ_dE(j, j) += E(l) * (-b * c + g * s);
      if (l == j) continue;
      const double ee = E(j) * E(l);
      J.dP_ddelta(j, l) = ee * (-b * c + g * s);
      J.dP_ddelta(j, j) += ee * (b * c - g * s);
      J.dQ_ddelta(j, l) = ee * (-b * s - g * c);
      J.dQ_ddelta(j, j) += ee * (b * s + g * c);
      J.dP_dE(j, l) = E(j) * (b * s + g * c);
      J.dQ_dE(j, l) = E(j) * (-b * c + g * s);
    }
    // d/dE_j of the diagonal term E_j^2 Y_jj counts twice.
    J.dP_dE(j, j) += E(j) * (lossy ? G(j, j) : 0.0);
    J.dQ_dE(j, j) += -E(j) * B(j, j);
  }
  return J;
}

}  // namespace droopstab
