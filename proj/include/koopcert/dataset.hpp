#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "koopcert/errors.hpp"
#include "koopcert/lifting.hpp"
#include "koopcert/linalg.hpp"

namespace koopcert {

struct DatasetMetadata {
  std::string system;
  std::uint64_t seed = 0;
  std::string policy;
};

/// One trajectory: states x_0..x_L and the inputs u_0..u_{L-1} applied between
/// them. Contributes L transitions.
struct Segment {
  std::vector<Vector> states;
  std::vector<Vector> inputs;

  std::size_t transitions() const { return inputs.size(); }
};

struct TransitionDataset {
  int n = 0;
  int m = 0;
  std::vector<Segment> segments;
  DatasetMetadata metadata;

  std::size_t num_transitions() const {
    std::size_t total = 0;
    for (const Segment& s : segments) total += s.transitions();
    return total;
  }

  /// Throws ConfigError if any structural invariant is violated.
  void validate() const {
    if (n < 1 || m < 1) throw ConfigError("dataset dimensions n and m must be positive");
    if (segments.empty()) throw ConfigError("dataset has no segments");
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const Segment& seg = segments[s];
      if (seg.states.size() < 2) {
        throw ConfigError("segment " + std::to_string(s) + " has fewer than 2 states");
      }
      if (seg.inputs.size() + 1 != seg.states.size()) {
        throw ConfigError("segment " + std::to_string(s) + " needs exactly one input per transition");
      }
      for (const Vector& x : seg.states) {
        if (x.size() != n) throw ConfigError("state dimension mismatch in segment " + std::to_string(s));
      }
      for (const Vector& u : seg.inputs) {
        if (u.size() != m) throw ConfigError("input dimension mismatch in segment " + std::to_string(s));
      }
    }
  }
};

/// Unstandardized column-sample matrices over the full dictionary.
struct RawLiftedMatrices {
  Matrix Z;  // D x N
  Matrix U;  // m x N
  Matrix Y;  // D x N
  std::vector<Eigen::Index> segment_starts;  // first column of each segment
  DictionarySpec dict;

  Eigen::Index num_samples() const { return Z.cols(); }
};

/// Columns are segment-major then time-major; no column spans two segments.
inline RawLiftedMatrices assemble(const TransitionDataset& data, const DictionarySpec& dict) {
  data.validate();
  if (dict.state_dim != data.n) {
    throw ConfigError("dictionary state dimension " + std::to_string(dict.state_dim) +
                      " does not match dataset n = " + std::to_string(data.n));
  }
  const auto cols = static_cast<Eigen::Index>(data.num_transitions());
  const auto dim = static_cast<Eigen::Index>(dict.size());
  RawLiftedMatrices raw{Matrix(dim, cols), Matrix(data.m, cols), Matrix(dim, cols), {}, dict};
  Eigen::Index k = 0;
  for (const Segment& seg : data.segments) {
    raw.segment_starts.push_back(k);
    Vector z = lift(seg.states.front(), dict);
    for (std::size_t t = 0; t < seg.inputs.size(); ++t) {
      Vector z_next = lift(seg.states[t + 1], dict);
      raw.Z.col(k) = z;
      raw.U.col(k) = seg.inputs[t];
      raw.Y.col(k) = z_next;
      z = std::move(z_next);
      ++k;
    }
  }
  if (!raw.U.allFinite()) throw NumericInputError("non-finite input entry");
  return raw;
}

namespace detail {

// 1/N (population) standard deviation of each row.
inline Vector row_std(const Matrix& m, const Vector& mean) {
  const double inv_n = 1.0 / static_cast<double>(m.cols());
  return ((m.colwise() - mean).rowwise().squaredNorm() * inv_n).cwiseSqrt();
}

}  // namespace detail

inline constexpr double kActiveTol = 1e-10;

/// Keeps coordinates whose sample std is at least tol * (largest coordinate std).
inline std::vector<bool> select_active(const Matrix& z_raw, double tol = kActiveTol) {
  if (z_raw.cols() == 0) throw DegenerateDataError("no samples to select active features from");
  const Vector mean = z_raw.rowwise().mean();
  const Vector sd = detail::row_std(z_raw, mean);
  const double max_sd = sd.size() ? sd.maxCoeff() : 0.0;
  if (!(max_sd > 0.0)) throw DegenerateDataError("every lifted coordinate is constant on the data");
  std::vector<bool> mask(static_cast<std::size_t>(sd.size()));
  for (Eigen::Index i = 0; i < sd.size(); ++i) mask[static_cast<std::size_t>(i)] = sd(i) >= tol * max_sd;
  return mask;
}

/// Per-coordinate affine maps learned on identification data. Feature vectors
/// have one entry per *active* coordinate.
struct StandardizationStats {
  Vector feature_means;
  Vector feature_scales;
  Vector input_means;
  Vector input_scales;
  std::vector<bool> active_mask;
  std::vector<bool> input_degenerate;  // zero-variance channel, scale forced to 1
  Vector dictionary_means;             // every raw coordinate, including inactive ones

  Eigen::Index active_dim() const { return feature_means.size(); }
  Eigen::Index input_dim() const { return input_means.size(); }

  std::vector<Eigen::Index> active_indices() const {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < active_mask.size(); ++i) {
      if (active_mask[i]) idx.push_back(static_cast<Eigen::Index>(i));
    }
    return idx;
  }

  /// Full-dictionary lifted vector -> standardized active features.
  Vector standardize_features(const Vector& z_full) const {
    Vector out(active_dim());
    Eigen::Index k = 0;
    for (std::size_t i = 0; i < active_mask.size(); ++i) {
      if (!active_mask[i]) continue;
      out(k) = (z_full(static_cast<Eigen::Index>(i)) - feature_means(k)) / feature_scales(k);
      ++k;
    }
    return out;
  }

  Vector destandardize_features(const Vector& z_std) const {
    return (z_std.array() * feature_scales.array() + feature_means.array()).matrix();
  }

  Vector standardize_input(const Vector& u) const {
    return ((u - input_means).array() / input_scales.array()).matrix();
  }

  Vector destandardize_input(const Vector& u_std) const {
    return (u_std.array() * input_scales.array() + input_means.array()).matrix();
  }

  /// Applies the stored maps column-wise; z_full has the full dictionary rows.
  Matrix standardize_feature_columns(const Matrix& z_full) const {
    Matrix out(active_dim(), z_full.cols());
    Eigen::Index k = 0;
    for (std::size_t i = 0; i < active_mask.size(); ++i) {
      if (!active_mask[i]) continue;
      out.row(k) = (z_full.row(static_cast<Eigen::Index>(i)).array() - feature_means(k)) / feature_scales(k);
      ++k;
    }
    return out;
  }

  Matrix standardize_input_columns(const Matrix& u) const {
    return ((u.colwise() - input_means).array().colwise() / input_scales.array()).matrix();
  }
};

struct LiftedRegressionData {
  Matrix Z;    // d x N
  Matrix U;    // m x N
  Matrix Y;    // d x N
  Matrix Phi;  // (d+m) x N, [Z; U]
  StandardizationStats stats;
  std::vector<Eigen::Index> segment_starts;
  DictionarySpec dict;

  Eigen::Index N() const { return Z.cols(); }
  Eigen::Index d() const { return Z.rows(); }
  Eigen::Index m() const { return U.rows(); }
};

/// center=false keeps the raw origin; scale=false keeps raw units. Both default
/// to the standard identification convention.
struct StandardizeOptions {
  bool center = true;
  bool scale = true;
};

inline LiftedRegressionData standardize(const RawLiftedMatrices& raw, const std::vector<bool>& active_mask,
                                        StandardizeOptions opts = {}) {
  if (static_cast<Eigen::Index>(active_mask.size()) != raw.Z.rows()) {
    throw ConfigError("active mask length does not match the number of lifted coordinates");
  }
  const Eigen::Index n_samples = raw.Z.cols();
  if (n_samples == 0) throw DegenerateDataError("no samples to standardize");

  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < active_mask.size(); ++i) {
    if (active_mask[i]) idx.push_back(static_cast<Eigen::Index>(i));
  }
  if (idx.empty()) throw DegenerateDataError("active mask is empty");
  const auto d = static_cast<Eigen::Index>(idx.size());

  Matrix z_act(d, n_samples), y_act(d, n_samples);
  for (Eigen::Index k = 0; k < d; ++k) {
    z_act.row(k) = raw.Z.row(idx[static_cast<std::size_t>(k)]);
    y_act.row(k) = raw.Y.row(idx[static_cast<std::size_t>(k)]);
  }

  StandardizationStats st;
  st.active_mask = active_mask;
  st.dictionary_means = raw.Z.rowwise().mean();
  const Vector z_mean = z_act.rowwise().mean();
  const Vector u_mean = raw.U.rowwise().mean();
  const Vector z_sd = detail::row_std(z_act, z_mean);
  const Vector u_sd = detail::row_std(raw.U, u_mean);

  st.feature_means = opts.center ? z_mean : Vector::Zero(d);
  st.input_means = opts.center ? u_mean : Vector::Zero(raw.U.rows());
  st.feature_scales = Vector::Ones(d);
  st.input_scales = Vector::Ones(raw.U.rows());
  st.input_degenerate.assign(static_cast<std::size_t>(raw.U.rows()), false);
  if (opts.scale) {
    for (Eigen::Index k = 0; k < d; ++k) {
      if (!(z_sd(k) > 0.0)) throw DegenerateDataError("active feature has zero variance");
      st.feature_scales(k) = z_sd(k);
    }
  }
  for (Eigen::Index j = 0; j < raw.U.rows(); ++j) {
    const bool flat = !(u_sd(j) > 1e-14 * (1.0 + std::abs(u_mean(j))));
    st.input_degenerate[static_cast<std::size_t>(j)] = flat;
    if (opts.scale && !flat) st.input_scales(j) = u_sd(j);
  }

  LiftedRegressionData out;
  out.Z = ((z_act.colwise() - st.feature_means).array().colwise() / st.feature_scales.array()).matrix();
  out.Y = ((y_act.colwise() - st.feature_means).array().colwise() / st.feature_scales.array()).matrix();
  out.U = st.standardize_input_columns(raw.U);
  out.Phi.resize(d + raw.U.rows(), n_samples);
  out.Phi << out.Z, out.U;
  out.stats = std::move(st);
  out.segment_starts = raw.segment_starts;
  out.dict = raw.dict;
  return out;
}

/// assemble + select_active + standardize.
inline LiftedRegressionData prepare(const TransitionDataset& data, const DictionarySpec& dict,
                                    StandardizeOptions opts = {}) {
  const RawLiftedMatrices raw = assemble(data, dict);
  return standardize(raw, select_active(raw.Z), opts);
}

/// Regression data on held-out transitions using frozen identification stats.
inline LiftedRegressionData apply_stats(const RawLiftedMatrices& raw, const StandardizationStats& st) {
  LiftedRegressionData out;
  out.Z = st.standardize_feature_columns(raw.Z);
  out.Y = st.standardize_feature_columns(raw.Y);
  out.U = st.standardize_input_columns(raw.U);
  out.Phi.resize(out.Z.rows() + out.U.rows(), out.Z.cols());
  out.Phi << out.Z, out.U;
  out.stats = st;
  out.segment_starts = raw.segment_starts;
  out.dict = raw.dict;
  return out;
}

}  // namespace koopcert
