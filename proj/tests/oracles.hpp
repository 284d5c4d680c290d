#pragma once

// Reference implementations on plain std::vector, independent of Eigen.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline Mat identity(std::size_t n) {
  Mat m = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0;
  return m;
}

inline Mat from_eigen(const Eigen::MatrixXd& e) {
  Mat m = zeros(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = 0; j < e.cols(); ++j) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = e(i, j);
  return m;
}

inline Eigen::MatrixXd to_eigen(const Mat& m) {
  const auto r = static_cast<Eigen::Index>(m.size());
  const auto c = r ? static_cast<Eigen::Index>(m[0].size()) : 0;
  Eigen::MatrixXd e(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) e(i, j) = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return e;
}

inline Mat transpose(const Mat& a) {
  if (a.empty()) return {};
  Mat t = zeros(a[0].size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline Mat mul(const Mat& a, const Mat& b) {
  const std::size_t r = a.size(), k = b.size(), c = b.empty() ? 0 : b[0].size();
  Mat out = zeros(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < c; ++j) out[i][j] += a[i][p] * b[p][j];
  return out;
}

inline Mat add(const Mat& a, const Mat& b, double sb = 1.0) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) out[i][j] += sb * b[i][j];
  return out;
}

inline Mat scale(const Mat& a, double s) {
  Mat out = a;
  for (auto& row : out)
    for (double& v : row) v *= s;
  return out;
}

inline double frob(const Mat& a) {
  double acc = 0.0;
  for (const auto& row : a)
    for (double v : row) acc += v * v;
  return std::sqrt(acc);
}

/// Cyclic Jacobi rotations; eigenvalues in ascending order.
inline std::vector<double> jacobi_eigenvalues(Mat a, double tol = 1e-15, int max_sweeps = 100) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      diag += a[i][i] * a[i][i];
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    }
    if (off <= tol * tol * std::max(diag, 1e-300)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  std::sort(ev.begin(), ev.end());
  return ev;
}

/// Solves A X = B by Gaussian elimination with partial pivoting.
inline Mat solve(Mat a, Mat b) {
  const std::size_t n = a.size(), c = b[0].size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (a[piv][col] == 0.0) throw std::runtime_error("singular system");
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t k = col; k < n; ++k) a[r][k] -= f * a[col][k];
      for (std::size_t k = 0; k < c; ++k) b[r][k] -= f * b[col][k];
    }
  }
  Mat x = zeros(n, c);
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = 0; k < c; ++k) {
      double acc = b[i][k];
      for (std::size_t j = i + 1; j < n; ++j) acc -= a[i][j] * x[j][k];
      x[i][k] = acc / a[i][i];
    }
  }
  return x;
}

inline Mat inverse(const Mat& a) { return solve(a, identity(a.size())); }

/// (1/N) M M^T
inline Mat gram_over_n(const Mat& m) {
  return scale(mul(m, transpose(m)), 1.0 / static_cast<double>(m[0].size()));
}

/// U - U Z^T (Z Z^T)^{-1} Z, Z of full row rank.
inline Mat project_out(const Mat& z, const Mat& u) {
  const Mat zt = transpose(z);
  const Mat coef = transpose(solve(mul(z, zt), mul(z, transpose(u))));  // U Z^T (Z Z^T)^{-1}
  return add(u, mul(coef, z), -1.0);
}

inline double min_eig(const Mat& sym) { return jacobi_eigenvalues(sym).front(); }

/// Y Phi^T (Phi Phi^T + lambda I)^{-1}
inline Mat ridge(const Mat& y, const Mat& phi, double lambda) {
  Mat g = mul(phi, transpose(phi));
  for (std::size_t i = 0; i < g.size(); ++i) g[i][i] += lambda;
  return transpose(solve(g, mul(phi, transpose(y))));
}

inline Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

}  // namespace oracle
