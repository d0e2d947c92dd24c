#pragma once

// Small dense helpers shared by the stability analysis.

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace droopstab::linalg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Orthonormal basis (as columns, m x (m-1)) of the orthogonal complement of
/// the vector with ones in its first k entries and zeros elsewhere.  Built
/// from the Householder reflector that maps that vector onto e_1.
inline Matrix complement_basis(Eigen::Index m, Eigen::Index k) {
  Vector u = Vector::Zero(m);
  u.head(k).setOnes();
  const Matrix U = u;
  Eigen::HouseholderQR<Matrix> qr(U);
  Matrix Q = qr.householderQ() * Matrix::Identity(m, m);
  return Q.rightCols(m - 1);
}

/// Eigenvalues (ascending) of a symmetric matrix.
inline Vector symmetric_eigenvalues(const Matrix& M) {
  if (M.rows() == 0) return Vector();
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

inline double max_eigenvalue(const Matrix& M) { return symmetric_eigenvalues(M).maxCoeff(); }
inline double min_eigenvalue(const Matrix& M) { return symmetric_eigenvalues(M).minCoeff(); }

/// Induced 2-norm: the largest singular value.
inline double spectral_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()(0);
}

/// Moore-Penrose pseudoinverse by SVD; singular values below
/// rel_tol * sigma_max are treated as zero.
inline Matrix pseudo_inverse(const Matrix& M, double rel_tol = 1e-10) {
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  if (s.size() == 0) return Matrix::Zero(M.cols(), M.rows());
  const double cut = rel_tol * s(0);
  Vector inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cut) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline double max_abs(const Matrix& M) { return M.size() ? M.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace droopstab::linalg
