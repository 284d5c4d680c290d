#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "koopcert/dataset.hpp"
#include "koopcert/dataset_io.hpp"
#include "koopcert/errors.hpp"
#include "koopcert/linalg.hpp"

namespace koopcert {

/// U_perp = U (I - P_Z): the part of each input row not linearly predictable
/// from the rows of Z. Rank deficiency in Z is handled through the relative
/// cutoff of linalg::kPinvTol on Z Z^T.
inline Matrix project_out_state(const Matrix& z, const Matrix& u) {
  if (z.cols() != u.cols()) throw ConfigError("Z and U must have the same number of columns");
  const Matrix basis = linalg::row_space_basis(z);
  if (basis.cols() == 0) return u;
  return u - (u * basis) * basis.transpose();
}

/// Smallest eigenvalue of (1/N) M M^T before clamping.
inline double min_normalized_gram_eigenvalue(const Matrix& m) {
  if (m.cols() == 0) return 0.0;
  return linalg::min_sym_eigenvalue(m * m.transpose() / static_cast<double>(m.cols()));
}

/// Joint regression certificate: lambda_min((1/N) Phi Phi^T), clamped at 0.
inline double c_reg(const Matrix& phi) { return std::max(0.0, min_normalized_gram_eigenvalue(phi)); }

/// Conditional intervention certificate: lambda_min((1/N) U_perp U_perp^T), clamped at 0.
inline double c_int(const Matrix& z, const Matrix& u) {
  return std::max(0.0, min_normalized_gram_eigenvalue(project_out_state(z, u)));
}

/// G_uu - G_uz G_zz^+ G_zu with G = (1/N) Phi Phi^T.
inline Matrix schur_information(const Matrix& z, const Matrix& u) {
  if (z.cols() != u.cols()) throw ConfigError("Z and U must have the same number of columns");
  const double inv_n = 1.0 / static_cast<double>(z.cols());
  const Matrix g_zz = z * z.transpose() * inv_n;
  const Matrix g_zu = z * u.transpose() * inv_n;
  const Matrix g_uu = u * u.transpose() * inv_n;
  return linalg::symmetrize(g_uu - g_zu.transpose() * linalg::pinv(g_zz) * g_zu);
}

/// S = U U^T + lambda I - U Z^T (Z Z^T + lambda I)^{-1} Z U^T (unnormalized).
inline Matrix regularized_schur(const Matrix& z, const Matrix& u, double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("regularized Schur complement needs lambda > 0");
  if (z.cols() != u.cols()) throw ConfigError("Z and U must have the same number of columns");
  const Matrix zzt = z * z.transpose() + lambda * Matrix::Identity(z.rows(), z.rows());
  const Matrix zut = z * u.transpose();
  const Matrix solved = Eigen::LLT<Matrix>(zzt).solve(zut);
  return linalg::symmetrize(u * u.transpose() + lambda * Matrix::Identity(u.rows(), u.rows()) -
                            zut.transpose() * solved);
}

struct Predictability {
  double value = 1.0;
  bool degenerate = false;  // tr(U U^T) == 0
};

/// 1 - tr(U_perp U_perp^T) / tr(U U^T), clamped to [0, 1].
inline Predictability input_predictability(const Matrix& z, const Matrix& u) {
  const double total = u.squaredNorm();
  if (!(total > 0.0)) return {1.0, true};
  const double resid = project_out_state(z, u).squaredNorm();
  return {std::clamp(1.0 - resid / total, 0.0, 1.0), false};
}

/// Unit eigenvector of (1/N) U_perp U_perp^T for its smallest eigenvalue.
inline Vector weakest_input_direction(const Matrix& z, const Matrix& u) {
  const Matrix up = project_out_state(z, u);
  Eigen::SelfAdjointEigenSolver<Matrix> es(linalg::symmetrize(up * up.transpose() / static_cast<double>(u.cols())));
  Vector a = es.eigenvectors().col(0);
  // Sign convention: largest-magnitude entry positive.
  Eigen::Index imax = 0;
  a.cwiseAbs().maxCoeff(&imax);
  if (a(imax) < 0) a = -a;
  return a;
}

struct CertificateReport {
  double c_reg = 0.0;
  double c_int = 0.0;
  double s_min_reg = 0.0;
  double lambda = 0.0;
  double input_predictability = 1.0;
  bool predictability_degenerate = false;
  long d_active = 0;
  long m = 0;
  long N = 0;
  // Unclamped eigenvalues, for diagnosing round-off.
  double c_reg_unclamped = 0.0;
  double c_int_unclamped = 0.0;
};

inline constexpr double kDefaultCertLambda = 1e-6;

inline CertificateReport certify(const LiftedRegressionData& data, double lambda = kDefaultCertLambda) {
  CertificateReport r;
  r.N = static_cast<long>(data.N());
  r.d_active = static_cast<long>(data.d());
  r.m = static_cast<long>(data.m());
  r.lambda = lambda;
  r.c_reg_unclamped = min_normalized_gram_eigenvalue(data.Phi);
  r.c_reg = std::max(0.0, r.c_reg_unclamped);
  r.c_int_unclamped = min_normalized_gram_eigenvalue(project_out_state(data.Z, data.U));
  r.c_int = std::max(0.0, r.c_int_unclamped);
  r.s_min_reg = linalg::min_sym_eigenvalue(regularized_schur(data.Z, data.U, lambda));
  const Predictability p = input_predictability(data.Z, data.U);
  r.input_predictability = p.value;
  r.predictability_degenerate = p.degenerate;
  return r;
}

inline constexpr const char* kCertificateCsvHeader = "N,d_active,m,c_reg,c_int,lambda,s_min_reg,input_predictability";

inline std::string to_csv_row(const CertificateReport& r) {
  return std::to_string(r.N) + "," + std::to_string(r.d_active) + "," + std::to_string(r.m) + "," +
         format_double(r.c_reg) + "," + format_double(r.c_int) + "," + format_double(r.lambda) + "," +
         format_double(r.s_min_reg) + "," + format_double(r.input_predictability);
}

}  // namespace koopcert
