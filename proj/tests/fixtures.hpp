#pragma once

#include <random>

#include "koopcert/koopcert.hpp"
#include "oracles.hpp"

namespace fixtures {

using koopcert::Matrix;

/// Regression data taken as already standardized (unit stats, identity dictionary).
inline koopcert::LiftedRegressionData regression_data(const Matrix& z, const Matrix& u, const Matrix& y) {
  koopcert::LiftedRegressionData data;
  data.Z = z;
  data.U = u;
  data.Y = y;
  data.Phi.resize(z.rows() + u.rows(), z.cols());
  data.Phi << z, u;
  data.dict = koopcert::build_dictionary(koopcert::DictionaryKind::identity, static_cast<int>(z.rows()));
  auto& st = data.stats;
  st.feature_means = koopcert::Vector::Zero(z.rows());
  st.feature_scales = koopcert::Vector::Ones(z.rows());
  st.input_means = koopcert::Vector::Zero(u.rows());
  st.input_scales = koopcert::Vector::Ones(u.rows());
  st.active_mask.assign(static_cast<std::size_t>(z.rows()), true);
  st.input_degenerate.assign(static_cast<std::size_t>(u.rows()), false);
  st.dictionary_means = koopcert::Vector::Zero(z.rows());
  data.segment_starts = {0};
  return data;
}

/// Random small regression instance with d, m in [1, 6] and N in [d+m+2, 40].
struct Instance {
  Matrix Z, U, Y, A, B, E;
};

inline Instance random_instance(std::mt19937_64& rng, double noise = 0.0) {
  std::uniform_int_distribution<int> dim(1, 6);
  const int d = dim(rng), m = dim(rng);
  std::uniform_int_distribution<int> cols(d + m + 2, 40);
  const int n = cols(rng);
  Instance in;
  in.Z = oracle::gaussian(rng, d, n);
  in.U = oracle::gaussian(rng, m, n);
  in.A = oracle::gaussian(rng, d, d, 0.5);
  in.B = oracle::gaussian(rng, d, m);
  in.E = oracle::gaussian(rng, d, n, noise);
  in.Y = in.A * in.Z + in.B * in.U + in.E;
  return in;
}

}  // namespace fixtures
