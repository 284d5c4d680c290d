#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "koopcert/certificates.hpp"
#include "koopcert/errors.hpp"
#include "koopcert/linalg.hpp"

namespace koopcert {

/// Inputs shared by the B-block error bounds. Fields a bound does not use
/// may be left at their defaults.
struct BoundInputs {
  double sigma = 0.0;
  double delta = 0.05;
  long N = 1;
  long m = 1;
  long q = 1;
  long d = 1;
  double beta_N = 0.0;          // c_int
  double eps_psi = 0.0;         // ||R M_Z|| <= sqrt(N) eps_psi
  double c_abs = 1.0;
  double lambda = 0.0;
  double K_star_norm = 0.0;     // ||[A*, B*]||
  double V_N_logdet_term = 0.0; // log(det(V_N)^{1/2} / lambda^{(d+m)/2})
  double s_min = 0.0;           // lambda_min(S_{u|z,lambda})
  double residual_term = 0.0;   // ||R Phi^T V_N^{-1/2}||

  void validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
    if (sigma < 0.0) throw ConfigError("sigma must be nonnegative");
    if (beta_N < 0.0) throw ConfigError("beta_N must be nonnegative");
  }
};

/// c sigma sqrt((m + q + log(1/delta)) / (N beta_N)) + eps_psi / sqrt(beta_N).
/// beta_N == 0 yields +inf (the control block is not identifiable).
inline double fixed_design_bound(const BoundInputs& in) {
  in.validate();
  if (in.beta_N == 0.0) return std::numeric_limits<double>::infinity();
  const double dims = static_cast<double>(in.m + in.q) + std::log(1.0 / in.delta);
  return in.c_abs * in.sigma * std::sqrt(dims / (static_cast<double>(in.N) * in.beta_N)) +
         in.eps_psi / std::sqrt(in.beta_N);
}

/// Closed-loop adapted-noise bound on ||B_lambda - B*||.
inline double martingale_bound(const BoundInputs& in) {
  in.validate();
  if (!(in.lambda > 0.0)) throw ConfigError("martingale bound needs lambda > 0");
  if (!(in.s_min > 0.0)) throw ConfigError("martingale bound needs s_min > 0");
  const double log_arg = in.V_N_logdet_term - std::log(in.delta);
  if (!(log_arg > 0.0)) throw NumericDomainError("nonpositive log-determinant argument; lambda too large for the data");
  const double noise = in.c_abs * in.sigma * std::sqrt(static_cast<double>(in.q) * log_arg);
  return (noise + in.residual_term + std::sqrt(in.lambda) * in.K_star_norm) / std::sqrt(in.s_min);
}

/// Same numerator as martingale_bound over sqrt(lambda_min(V_N)): a bound on the
/// whole of ||K_lambda - K*||, hence on the A-block.
inline double joint_martingale_bound(const BoundInputs& in, double vn_min_eigenvalue) {
  if (!(vn_min_eigenvalue > 0.0)) throw ConfigError("lambda_min(V_N) must be positive");
  BoundInputs joint = in;
  joint.s_min = vn_min_eigenvalue;
  return martingale_bound(joint);
}

/// (1/2) log det(V_N) - ((d+m)/2) log(lambda), V_N = lambda I + Phi Phi^T.
inline double vn_logdet_term(const Matrix& phi, double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  const Matrix vn = phi * phi.transpose() + lambda * Matrix::Identity(phi.rows(), phi.rows());
  return 0.5 * linalg::spd_logdet(vn) - 0.5 * static_cast<double>(phi.rows()) * std::log(lambda);
}

/// ||R Phi^T V_N^{-1/2}|| for a known finite-dictionary residual R.
inline double residual_term(const Matrix& r, const Matrix& phi, double lambda) {
  const Matrix vn = phi * phi.transpose() + lambda * Matrix::Identity(phi.rows(), phi.rows());
  return linalg::op_norm(r * phi.transpose() * linalg::spd_inv_sqrt(vn));
}

/// Fills every data-dependent field of BoundInputs from (Z, U). sigma, delta,
/// c_abs, eps_psi, K_star_norm and residual_term stay with the caller.
inline BoundInputs bound_inputs_from_data(const Matrix& z, const Matrix& u, double lambda, long q) {
  BoundInputs in;
  in.N = static_cast<long>(z.cols());
  in.d = static_cast<long>(z.rows());
  in.m = static_cast<long>(u.rows());
  in.q = q;
  in.lambda = lambda;
  in.beta_N = c_int(z, u);
  Matrix phi(z.rows() + u.rows(), z.cols());
  phi << z, u;
  if (lambda > 0.0) {
    in.V_N_logdet_term = vn_logdet_term(phi, lambda);
    in.s_min = linalg::min_sym_eigenvalue(regularized_schur(z, u, lambda));
  }
  return in;
}

/// Cramer-Rao variance floor sigma^2 / (N eps^2) for the scalar control gain;
/// +inf when eps == 0.
inline double crlb(double sigma, long N, double eps) {
  if (N < 1) throw ConfigError("crlb needs N >= 1");
  if (eps < 0.0) throw ConfigError("crlb needs eps >= 0");
  if (eps == 0.0) return std::numeric_limits<double>::infinity();
  return sigma * sigma / (static_cast<double>(N) * eps * eps);
}

struct MarginCheck {
  bool certified = false;
  double margin_slack = 0.0;  // alpha/2 - lhs
  double eta_cl = 0.0;
  std::string reason;
};

/// Robustness of lifted feedback u = L z: if the nominal closed loop
/// F = A + B L satisfies F^T P F - P <= -alpha I and
/// 2||P|| ||F|| eta_cl + ||P|| eta_cl^2 <= alpha/2 with eta_cl = eta_A + ||L|| eta_B,
/// every true system in the (eta_A, eta_B) ball satisfies the decrease with alpha/2.
inline MarginCheck feedback_margin_check(const Matrix& a_hat, const Matrix& b_hat, const Matrix& gain,
                                         const Matrix& p, double alpha, double eta_a, double eta_b) {
  if (p.rows() != p.cols() || p.rows() != a_hat.rows()) throw ConfigError("P must be square and match A");
  if ((p - p.transpose()).norm() > 1e-9 * std::max(1.0, p.norm())) throw ConfigError("P must be symmetric");
  if (!(linalg::min_sym_eigenvalue(p) > 0.0)) throw ConfigError("P must be positive definite");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");

  MarginCheck out;
  const Matrix f = a_hat + b_hat * gain;
  const Matrix lyap = f.transpose() * p * f - p + alpha * Matrix::Identity(p.rows(), p.cols());
  out.eta_cl = eta_a + linalg::op_norm(gain) * eta_b;
  const double p_norm = linalg::op_norm(p);
  const double lhs = 2.0 * p_norm * linalg::op_norm(f) * out.eta_cl + p_norm * out.eta_cl * out.eta_cl;
  out.margin_slack = 0.5 * alpha - lhs;
  if (linalg::max_sym_eigenvalue(lyap) > 1e-12 * std::max(1.0, p_norm)) {
    out.reason = "nominal closed loop does not satisfy the decrease condition";
    return out;
  }
  out.certified = out.margin_slack >= 0.0;
  if (!out.certified) out.reason = "perturbation radius exceeds the margin";
  return out;
}

/// P = sum_k (F^T)^k (alpha I) F^k, the solution of F^T P F - P = -alpha I.
inline Matrix solve_discrete_lyapunov(const Matrix& f, double alpha) {
  if (f.rows() != f.cols()) throw ConfigError("F must be square");
  if (linalg::spectral_radius(f) >= 1.0) throw InstabilityError("spectral radius of F is >= 1");
  const Eigen::Index n = f.rows();
  Matrix p = alpha * Matrix::Identity(n, n);
  // Doubling: after step j the sum covers 2^{j+1} terms.
  Matrix fk = f;
  for (int iter = 0; iter < 200; ++iter) {
    const Matrix inc = fk.transpose() * p * fk;
    p += inc;
    fk = fk * fk;
    if (inc.norm() < 1e-12 * std::max(1.0, p.norm())) break;
  }
  return linalg::symmetrize(p);
}

}  // namespace koopcert
