#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "koopcert/errors.hpp"

namespace koopcert {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

/// Relative singular-value cutoff applied to Gram matrices (ZZ^T and friends).
inline constexpr double kPinvTol = 1e-12;

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Eigenvalues of (M + M^T)/2 in ascending order.
inline Vector sym_eigenvalues(const Matrix& m) {
  if (m.size() == 0) return Vector();
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

inline double min_sym_eigenvalue(const Matrix& m) {
  const Vector ev = sym_eigenvalues(m);
  return ev.size() ? ev(0) : 0.0;
}

inline double max_sym_eigenvalue(const Matrix& m) {
  const Vector ev = sym_eigenvalues(m);
  return ev.size() ? ev(ev.size() - 1) : 0.0;
}

/// Largest singular value.
inline double op_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

/// Moore-Penrose pseudoinverse; singular values below rel_tol * sigma_max are
/// treated as zero.
inline Matrix pinv(const Matrix& m, double rel_tol = kPinvTol) {
  if (m.size() == 0) return Matrix::Zero(m.cols(), m.rows());
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff = rel_tol * s(0);
  Vector s_inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff && s(i) > 0.0) s_inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * s_inv.asDiagonal() * svd.matrixU().transpose();
}

/// Orthonormal basis (N x r) for the row space of Z (d x N). A singular value
/// of Z counts when its square exceeds gram_rel_tol * sigma_max^2, i.e. the
/// cutoff matches pinv(Z Z^T, gram_rel_tol).
inline Matrix row_space_basis(const Matrix& z, double gram_rel_tol = kPinvTol) {
  if (z.size() == 0) return Matrix::Zero(z.cols(), 0);
  Eigen::JacobiSVD<Matrix> svd(z.transpose(), Eigen::ComputeThinU);
  const Vector& s = svd.singularValues();
  const double cutoff = std::sqrt(gram_rel_tol) * s(0);
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > cutoff && s(rank) > 0.0) ++rank;
  return svd.matrixU().leftCols(rank);
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
inline Matrix spd_inverse(const Matrix& m) {
  Eigen::LLT<Matrix> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) throw NumericDomainError("matrix is not positive definite");
  return llt.solve(Matrix::Identity(m.rows(), m.cols()));
}

inline double spd_logdet(const Matrix& m) {
  Eigen::LLT<Matrix> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) throw NumericDomainError("matrix is not positive definite");
  const Matrix& l = llt.matrixL();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

/// M^{-1/2} for symmetric positive definite M.
inline Matrix spd_inv_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  const Vector& ev = es.eigenvalues();
  if (ev.size() && ev(0) <= 0.0) throw NumericDomainError("matrix is not positive definite");
  return es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

inline double spectral_radius(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace linalg
}  // namespace koopcert
