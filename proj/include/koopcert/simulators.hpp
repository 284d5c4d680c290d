#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>

#include "koopcert/dataset.hpp"
#include "koopcert/errors.hpp"
#include "koopcert/linalg.hpp"
#include "koopcert/rng.hpp"

namespace koopcert {

enum class SystemKind { scalar_linear, duffing, van_der_pol };

inline std::string_view to_string(SystemKind k) {
  switch (k) {
    case SystemKind::scalar_linear: return "scalar_linear";
    case SystemKind::duffing: return "duffing";
    case SystemKind::van_der_pol: return "van_der_pol";
  }
  return "?";
}

inline SystemKind system_kind_from_string(std::string_view s) {
  if (s == "scalar_linear" || s == "scalar") return SystemKind::scalar_linear;
  if (s == "duffing") return SystemKind::duffing;
  if (s == "van_der_pol" || s == "vdp") return SystemKind::van_der_pol;
  throw ConfigError("unknown system '" + std::string(s) + "'");
}

struct SystemSpec {
  SystemKind kind = SystemKind::scalar_linear;
  std::map<std::string, double> params;
  double dt = 0.01;          // RK4 step (continuous systems)
  double input_bound = 1.0;  // u_max (continuous systems)

  double param(const std::string& name) const {
    const auto it = params.find(name);
    if (it == params.end()) throw ConfigError("system parameter '" + name + "' is missing");
    return it->second;
  }

  int state_dim() const { return kind == SystemKind::scalar_linear ? 1 : 2; }
  int input_dim() const { return 1; }

  void validate() const {
    if (kind != SystemKind::scalar_linear) {
      if (!(dt > 0.0)) throw ConfigError("dt must be positive");
      if (!(input_bound > 0.0)) throw ConfigError("input_bound must be positive");
    } else if (param("sigma_e") < 0.0) {
      throw ConfigError("sigma_e must be nonnegative");
    }
  }
};

/// x_{k+1} = 0.85 x_k + 0.6 u_k + e_k, e_k ~ N(0, 0.02^2).
inline SystemSpec scalar_system(double a = 0.85, double b = 0.6, double sigma_e = 0.02) {
  return {SystemKind::scalar_linear, {{"a", a}, {"b", b}, {"sigma_e", sigma_e}}, 0.0, 1.0};
}

/// x1' = x2, x2' = -delta x2 - alpha_c x1 - beta_c x1^3 + u (bistable for alpha_c < 0).
inline SystemSpec duffing_system(double delta = 0.5, double alpha_c = -1.0, double beta_c = 1.0, double dt = 0.01,
                                 double input_bound = 1.0) {
  return {SystemKind::duffing, {{"delta", delta}, {"alpha_c", alpha_c}, {"beta_c", beta_c}}, dt, input_bound};
}

/// x1' = x2, x2' = mu (1 - x1^2) x2 - x1 + u.
inline SystemSpec van_der_pol_system(double mu = 1.0, double dt = 0.01, double input_bound = 1.0) {
  return {SystemKind::van_der_pol, {{"mu", mu}}, dt, input_bound};
}

/// u = gain * x + dither, optionally clipped to [-input_bound, input_bound].
/// For continuous systems the dither standard deviation is
/// dither_scale * input_bound; for the scalar system it is dither_scale.
struct PolicySpec {
  Matrix gain;  // m x n
  double dither_scale = 0.0;
  bool clip = true;
  std::uint64_t seed = 0;

  void validate(int n, int m) const {
    if (gain.rows() != m || gain.cols() != n) throw ConfigError("policy gain has the wrong shape");
    if (dither_scale < 0.0) throw ConfigError("dither_scale must be nonnegative");
  }
};

inline PolicySpec scalar_policy(double kappa = -0.7, double eps = 0.0) {
  return {Matrix::Constant(1, 1, kappa), eps, false, 0};
}

inline Vector rhs(const SystemSpec& sys, const Vector& x, const Vector& u) {
  if (x.size() != sys.state_dim() || u.size() != sys.input_dim()) throw ConfigError("rhs dimension mismatch");
  Vector dx(2);
  switch (sys.kind) {
    case SystemKind::duffing: {
      const double delta = sys.param("delta"), alpha_c = sys.param("alpha_c"), beta_c = sys.param("beta_c");
      dx << x(1), -delta * x(1) - alpha_c * x(0) - beta_c * x(0) * x(0) * x(0) + u(0);
      return dx;
    }
    case SystemKind::van_der_pol: {
      const double mu = sys.param("mu");
      dx << x(1), mu * (1.0 - x(0) * x(0)) * x(1) - x(0) + u(0);
      return dx;
    }
    case SystemKind::scalar_linear:
      break;
  }
  throw ConfigError("rhs is only defined for continuous-time systems");
}

/// Classical RK4 with the input held constant over the step.
template <typename Field>
Vector rk4_step(Field&& f, const Vector& x, double dt) {
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (!x.allFinite()) throw NumericInputError("non-finite state");
  const Vector k1 = f(x);
  const Vector k2 = f(x + 0.5 * dt * k1);
  const Vector k3 = f(x + 0.5 * dt * k2);
  const Vector k4 = f(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline Vector rk4_step(const SystemSpec& sys, const Vector& x, const Vector& u, double dt) {
  return rk4_step([&](const Vector& s) { return rhs(sys, s, u); }, x, dt);
}

/// Noiseless sampled-data step: `substeps` RK4 steps of size sys.dt, or the
/// deterministic part a x + b u for the scalar system.
inline Vector true_next_state(const SystemSpec& sys, const Vector& x, const Vector& u, int substeps) {
  if (sys.kind == SystemKind::scalar_linear) {
    return Vector::Constant(1, sys.param("a") * x(0) + sys.param("b") * u(0));
  }
  Vector s = x;
  for (int i = 0; i < substeps; ++i) s = rk4_step(sys, s, u, sys.dt);
  return s;
}

/// One segment of N transitions. Per step: v_k then e_k are drawn from the
/// seeded generator, u_k = kappa x_k + eps v_k, x_{k+1} = a x_k + b u_k + e_k.
/// v_k is drawn even when eps = 0 so noise sequences match across eps.
inline TransitionDataset simulate_scalar(const SystemSpec& sys, const PolicySpec& policy, long N, double x0,
                                         std::uint64_t seed) {
  if (sys.kind != SystemKind::scalar_linear) throw ConfigError("simulate_scalar needs the scalar system");
  if (N < 1) throw ConfigError("N must be >= 1");
  sys.validate();
  policy.validate(1, 1);
  const double a = sys.param("a"), b = sys.param("b"), sigma = sys.param("sigma_e");
  const double kappa = policy.gain(0, 0), eps = policy.dither_scale;
  Pcg64 rng(seed, 0x5ca1a7);
  std::normal_distribution<double> normal(0.0, 1.0);

  TransitionDataset data;
  data.n = 1;
  data.m = 1;
  data.metadata = {"scalar_linear", seed, "u = " + std::to_string(kappa) + " x + eps v, eps = " + std::to_string(eps)};
  Segment seg;
  seg.states.reserve(static_cast<std::size_t>(N + 1));
  seg.inputs.reserve(static_cast<std::size_t>(N));
  double x = x0;
  seg.states.push_back(Vector::Constant(1, x));
  for (long k = 0; k < N; ++k) {
    const double v = normal(rng);
    const double e = normal(rng);
    const double u = kappa * x + eps * v;
    x = a * x + b * u + sigma * e;
    seg.inputs.push_back(Vector::Constant(1, u));
    seg.states.push_back(Vector::Constant(1, x));
  }
  data.segments.push_back(std::move(seg));
  return data;
}

struct ControlledSimulation {
  TransitionDataset data;
  int diverged_segments = 0;
};

/// Box for initial states: each coordinate uniform on [-half_width, half_width].
struct InitialBox {
  double half_width = 1.0;
};

inline constexpr double kDivergenceNorm = 1e6;

/// Sampled-data rollouts under u = clip(L x + eps u_max v). Each sample holds u
/// for `steps_per_sample` RK4 steps. Segment s uses its own generator seeded
/// from (seed, s): first the initial state, then one dither draw per sample.
inline ControlledSimulation simulate_controlled(const SystemSpec& sys, const PolicySpec& policy, int num_segments,
                                                int segment_length, int steps_per_sample, InitialBox box,
                                                std::uint64_t seed) {
  if (sys.kind == SystemKind::scalar_linear) throw ConfigError("simulate_controlled needs a continuous system");
  if (segment_length < 2) throw ConfigError("segment_length must be >= 2");
  if (num_segments < 1) throw ConfigError("num_segments must be >= 1");
  if (steps_per_sample < 1) throw ConfigError("steps_per_sample must be >= 1");
  sys.validate();
  const int n = sys.state_dim(), m = sys.input_dim();
  policy.validate(n, m);
  const double u_max = sys.input_bound;

  ControlledSimulation out;
  out.data.n = n;
  out.data.m = m;
  out.data.metadata = {std::string(to_string(sys.kind)), seed,
                       "clipped linear feedback, dither " + std::to_string(policy.dither_scale) + " x input bound"};
  for (int s = 0; s < num_segments; ++s) {
    Pcg64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)), 0xc0117011ed);
    std::uniform_real_distribution<double> unif(-box.half_width, box.half_width);
    std::normal_distribution<double> normal(0.0, 1.0);
    Segment seg;
    Vector x(n);
    for (int i = 0; i < n; ++i) x(i) = unif(rng);
    seg.states.push_back(x);
    bool diverged = false;
    for (int t = 0; t + 1 < segment_length; ++t) {
      Vector u = policy.gain * x;
      for (int j = 0; j < m; ++j) {
        u(j) += policy.dither_scale * u_max * normal(rng);
        if (policy.clip) u(j) = std::clamp(u(j), -u_max, u_max);
      }
      try {
        for (int sub = 0; sub < steps_per_sample; ++sub) x = rk4_step(sys, x, u, sys.dt);
      } catch (const NumericInputError&) {
        diverged = true;
        break;
      }
      if (!x.allFinite() || x.norm() > kDivergenceNorm) {
        diverged = true;
        break;
      }
      seg.inputs.push_back(u);
      seg.states.push_back(x);
    }
    if (diverged) {
      ++out.diverged_segments;
      continue;
    }
    out.data.segments.push_back(std::move(seg));
  }
  return out;
}

}  // namespace koopcert
