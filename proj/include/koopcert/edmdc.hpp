#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "koopcert/certificates.hpp"
#include "koopcert/dataset.hpp"
#include "koopcert/errors.hpp"
#include "koopcert/lifting.hpp"
#include "koopcert/linalg.hpp"
#include "koopcert/rng.hpp"

namespace koopcert {

/// Lifted linear model z' = A z + B u in standardized active coordinates.
struct EdmdcModel {
  Matrix A;  // q x d
  Matrix B;  // q x m
  double lambda = 0.0;
  DictionarySpec dict;
  StandardizationStats stats;
  bool nonidentifiable_b = false;  // B emitted although c_int is below threshold

  /// [A, B]
  Matrix K() const {
    Matrix k(A.rows(), A.cols() + B.cols());
    k << A, B;
    return k;
  }

  /// B mapped to raw feature and input units: diag(s_z) B diag(1/s_u).
  Matrix raw_B() const {
    return stats.feature_scales.asDiagonal() * B * stats.input_scales.cwiseInverse().asDiagonal();
  }

  Matrix raw_A() const {
    return stats.feature_scales.asDiagonal() * A * stats.feature_scales.cwiseInverse().asDiagonal();
  }
};

namespace detail {

inline EdmdcModel make_model(const Matrix& k, const LiftedRegressionData& data, double lambda) {
  EdmdcModel model;
  model.A = k.leftCols(data.d());
  model.B = k.rightCols(data.m());
  model.lambda = lambda;
  model.stats = data.stats;
  model.dict = data.dict;
  if (!model.A.allFinite() || !model.B.allFinite()) throw NumericInputError("fitted operator has non-finite entries");
  return model;
}

inline Matrix columns(const Matrix& m, const std::vector<Eigen::Index>& cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(cols[i]);
  return out;
}

inline Matrix ridge_solve(const Matrix& y, const Matrix& phi, double lambda) {
  const Matrix gram = phi * phi.transpose() + lambda * Matrix::Identity(phi.rows(), phi.rows());
  // K = Y Phi^T (Phi Phi^T + lambda I)^{-1}, solved from the transposed system.
  return Eigen::LDLT<Matrix>(gram).solve(phi * y.transpose()).transpose();
}

}  // namespace detail

/// Minimum-Frobenius-norm least-squares solution [A, B] = Y Phi^T (Phi Phi^T)^+.
/// Computed as Y pinv(Phi) with the Gram cutoff translated to singular values of Phi.
inline EdmdcModel fit_ls(const LiftedRegressionData& data) {
  const Matrix k = data.Y * linalg::pinv(data.Phi, std::sqrt(linalg::kPinvTol));
  return detail::make_model(k, data, 0.0);
}

inline EdmdcModel fit_ridge(const LiftedRegressionData& data, double lambda) {
  if (lambda < 0.0) throw ConfigError("ridge parameter must be nonnegative");
  if (lambda == 0.0) return fit_ls(data);
  return detail::make_model(detail::ridge_solve(data.Y, data.Phi, lambda), data, lambda);
}

/// 13 values from 1e-10 to 1e2, logarithmically spaced.
inline std::vector<double> default_ridge_grid() {
  std::vector<double> grid;
  for (int e = -10; e <= 2; ++e) grid.push_back(std::pow(10.0, e));
  return grid;
}

/// Column split used for ridge selection: whole segments go to validation when
/// there are at least two segments, otherwise the trailing 20% of columns.
struct HoldoutSplit {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> validation;
};

inline HoldoutSplit holdout_split(const LiftedRegressionData& data, std::uint64_t seed, double fraction = 0.2) {
  HoldoutSplit split;
  const Eigen::Index n = data.N();
  std::vector<Eigen::Index> starts = data.segment_starts;
  if (starts.empty()) starts.push_back(0);
  if (starts.size() >= 2) {
    std::vector<std::size_t> order(starts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Pcg64 rng(seed, 0x5e1ec7);
    // Fisher-Yates with an explicit generator so the split is portable.
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng() % (i + 1));
      std::swap(order[i], order[j]);
    }
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(starts.size()))));
    std::vector<bool> is_val(starts.size(), false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
    for (std::size_t s = 0; s < starts.size(); ++s) {
      const Eigen::Index end = s + 1 < starts.size() ? starts[s + 1] : n;
      for (Eigen::Index c = starts[s]; c < end; ++c) (is_val[s] ? split.validation : split.train).push_back(c);
    }
  } else {
    const auto n_val = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::ceil(fraction * static_cast<double>(n))));
    for (Eigen::Index c = 0; c < n; ++c) (c < n - n_val ? split.train : split.validation).push_back(c);
  }
  return split;
}

struct RidgeSelection {
  double lambda = 0.0;
  std::vector<double> candidates;
  std::vector<double> validation_errors;  // Frobenius, aligned with candidates
};

/// Picks the candidate with the smallest held-out one-step Frobenius error.
/// Ties (relative difference <= 1e-12) go to the larger lambda.
inline RidgeSelection select_ridge_detailed(const LiftedRegressionData& data, const std::vector<double>& candidates,
                                            std::uint64_t seed = 0) {
  if (candidates.empty()) throw ConfigError("ridge candidate list is empty");
  RidgeSelection sel;
  sel.candidates = candidates;
  if (candidates.size() == 1) {
    sel.lambda = candidates.front();
    sel.validation_errors.assign(1, std::nan(""));
    return sel;
  }
  const HoldoutSplit split = holdout_split(data, seed);
  const Matrix phi_tr = detail::columns(data.Phi, split.train);
  const Matrix y_tr = detail::columns(data.Y, split.train);
  const Matrix phi_va = detail::columns(data.Phi, split.validation);
  const Matrix y_va = detail::columns(data.Y, split.validation);

  double best_err = std::numeric_limits<double>::infinity();
  double best_lambda = candidates.front();
  for (double lambda : candidates) {
    if (lambda < 0.0) throw ConfigError("ridge candidates must be nonnegative");
    const Matrix k = lambda > 0.0 ? detail::ridge_solve(y_tr, phi_tr, lambda)
                                  : Matrix(y_tr * linalg::pinv(phi_tr, std::sqrt(linalg::kPinvTol)));
    const double err = (y_va - k * phi_va).norm();
    sel.validation_errors.push_back(err);
    const double tie = 1e-12 * std::max(err, best_err == std::numeric_limits<double>::infinity() ? err : best_err);
    if (err < best_err - tie) {
      best_err = err;
      best_lambda = lambda;
    } else if (std::abs(err - best_err) <= tie && lambda > best_lambda) {
      best_lambda = lambda;
    }
  }
  sel.lambda = best_lambda;
  return sel;
}

inline double select_ridge(const LiftedRegressionData& data, const std::vector<double>& candidates,
                           std::uint64_t seed = 0) {
  return select_ridge_detailed(data, candidates, seed).lambda;
}

inline constexpr double kNonIdentifiableThreshold = 1e-12;
inline constexpr double kConfounderAdmission = 1e-10;

/// Residualized control block B = Y M_Z U_perp^T (U_perp U_perp^T)^{-1}.
inline Matrix residualized_b(const LiftedRegressionData& data) {
  const Matrix u_perp = project_out_state(data.Z, data.U);
  const double cint = std::max(0.0, min_normalized_gram_eigenvalue(u_perp));
  if (cint <= kNonIdentifiableThreshold) {
    const Vector a = weakest_input_direction(data.Z, data.U);
    throw NonIdentifiableError("control block is not identifiable: c_int = " + std::to_string(cint),
                               std::vector<double>(a.data(), a.data() + a.size()));
  }
  const Matrix y_perp = project_out_state(data.Z, data.Y);  // Y M_Z
  const Matrix info = linalg::symmetrize(u_perp * u_perp.transpose());
  return Eigen::LDLT<Matrix>(info).solve(u_perp * y_perp.transpose()).transpose();
}

/// Two models that agree on every collected transition.
struct ModelPair {
  EdmdcModel base;
  EdmdcModel confounded;
  Vector direction_a;  // m
  Vector direction_h;  // d
  Vector scale_c;      // q
};

/// Builds A_c = A - c h^T, B_c = B + c a^T where a^T U = h^T Z on the data.
/// Refuses when c_int exceeds the admission threshold.
inline ModelPair construct_confounder(const LiftedRegressionData& data, const EdmdcModel& base, const Vector& scale_c) {
  if (scale_c.size() != base.A.rows()) throw ConfigError("scale_c must have one entry per output row");
  const double cint = c_int(data.Z, data.U);
  if (cint > kConfounderAdmission) {
    throw ConfigError("no exact confounder exists: c_int = " + std::to_string(cint));
  }
  ModelPair pair;
  pair.base = base;
  pair.direction_a = weakest_input_direction(data.Z, data.U);
  pair.direction_h = linalg::pinv(data.Z.transpose()) * (data.U.transpose() * pair.direction_a);
  pair.scale_c = scale_c;
  pair.confounded = base;
  pair.confounded.A = base.A - scale_c * pair.direction_h.transpose();
  pair.confounded.B = base.B + scale_c * pair.direction_a.transpose();
  return pair;
}

struct OneStepPrediction {
  Vector standardized;  // d, active standardized features
  Vector features;      // d, active features in raw units
  Vector state;         // n, identity coordinates in raw units
};

/// Assumes the dictionary puts the identity coordinates first (build_dictionary
/// guarantees this); an inactive identity coordinate predicts its data mean.
inline OneStepPrediction predict_one_step(const EdmdcModel& model, const Vector& x, const Vector& u) {
  if (u.size() != model.B.cols()) throw ConfigError("input dimension does not match model");
  if (!u.allFinite()) throw NumericInputError("non-finite input entry");
  const Vector z = model.stats.standardize_features(lift(x, model.dict));
  OneStepPrediction p;
  p.standardized = model.A * z + model.B * model.stats.standardize_input(u);
  p.features = model.stats.destandardize_features(p.standardized);
  p.state.resize(model.dict.state_dim);
  Eigen::Index k = 0;
  for (int i = 0; i < model.dict.state_dim; ++i) {
    if (model.stats.active_mask[static_cast<std::size_t>(i)]) {
      p.state(i) = p.features(k++);
    } else {
      p.state(i) = model.stats.dictionary_means(i);
    }
  }
  return p;
}

// --- serialization ---------------------------------------------------------

namespace detail {

inline nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json mat_json(const Matrix& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

inline Matrix json_mat(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) throw ConfigError("matrix data has wrong length");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

}  // namespace detail

inline nlohmann::json to_json(const StandardizationStats& s) {
  return {{"feature_means", detail::vec_json(s.feature_means)},
          {"feature_scales", detail::vec_json(s.feature_scales)},
          {"input_means", detail::vec_json(s.input_means)},
          {"input_scales", detail::vec_json(s.input_scales)},
          {"active_mask", s.active_mask},
          {"input_degenerate", s.input_degenerate},
          {"dictionary_means", detail::vec_json(s.dictionary_means)}};
}

inline StandardizationStats stats_from_json(const nlohmann::json& j) {
  StandardizationStats s;
  s.feature_means = detail::json_vec(j.at("feature_means"));
  s.feature_scales = detail::json_vec(j.at("feature_scales"));
  s.input_means = detail::json_vec(j.at("input_means"));
  s.input_scales = detail::json_vec(j.at("input_scales"));
  s.active_mask = j.at("active_mask").get<std::vector<bool>>();
  s.input_degenerate = j.at("input_degenerate").get<std::vector<bool>>();
  s.dictionary_means = detail::json_vec(j.at("dictionary_means"));
  return s;
}

/// A and B are stored row-major.
inline nlohmann::json to_json(const EdmdcModel& m) {
  nlohmann::json j = {{"A", detail::mat_json(m.A)},
                      {"B", detail::mat_json(m.B)},
                      {"lambda", m.lambda},
                      {"dict", to_json(m.dict)},
                      {"stats", to_json(m.stats)}};
  if (m.nonidentifiable_b) j["warning"] = "NONIDENTIFIABLE_B";
  return j;
}

inline EdmdcModel model_from_json(const nlohmann::json& j) {
  EdmdcModel m;
  m.A = detail::json_mat(j.at("A"));
  m.B = detail::json_mat(j.at("B"));
  m.lambda = j.at("lambda").get<double>();
  m.dict = dictionary_from_json(j.at("dict"));
  m.stats = stats_from_json(j.at("stats"));
  m.nonidentifiable_b = j.value("warning", "") == "NONIDENTIFIABLE_B";
  return m;
}

}  // namespace koopcert
