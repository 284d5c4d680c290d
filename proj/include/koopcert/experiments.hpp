#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "koopcert/bounds.hpp"
#include "koopcert/certificates.hpp"
#include "koopcert/dataset.hpp"
#include "koopcert/dataset_io.hpp"
#include "koopcert/edmdc.hpp"
#include "koopcert/errors.hpp"
#include "koopcert/lifting.hpp"
#include "koopcert/rng.hpp"
#include "koopcert/simulators.hpp"

namespace koopcert {

inline constexpr const char* kSoftwareVersion = "koopcert 1.0.0";
inline constexpr double kNotAvailable = std::numeric_limits<double>::quiet_NaN();

/// One (setting, seed) row. NaN fields are written as "n/a".
struct ExperimentRecord {
  std::string experiment;
  std::string system;
  std::uint64_t seed = 0;
  long N = 0;
  double epsilon = 0.0;  // scalar dither std, or dither scale (fraction of u_max)
  double budget = kNotAvailable;
  double c_int = kNotAvailable;      // standardized features and inputs
  double c_int_raw = kNotAvailable;  // centered, unscaled inputs
  double c_reg = kNotAvailable;
  double input_predictability = kNotAvailable;
  double behavior_rmse = kNotAvailable;
  double counterfactual_rmse = kNotAvailable;
  double b_error = kNotAvailable;
  double lambda = kNotAvailable;
  double bound_fixed = kNotAvailable;
  double bound_martingale = kNotAvailable;
  double crlb_var = kNotAvailable;
  double cert_margin = kNotAvailable;
  int diverged_segments = 0;
  std::string status = "ok";
};

inline constexpr const char* kRecordCsvHeader =
    "experiment,system,seed,N,epsilon,budget,c_int,c_int_raw,c_reg,input_predictability,behavior_rmse,"
    "counterfactual_rmse,b_error,lambda,bound_fixed,bound_martingale,crlb_var,cert_margin,diverged_segments,status";

inline std::string csv_number(double v) { return std::isnan(v) ? "n/a" : format_double(v); }

inline std::string to_csv_line(const ExperimentRecord& r) {
  std::ostringstream os;
  os << r.experiment << ',' << r.system << ',' << r.seed << ',' << r.N << ',' << csv_number(r.epsilon) << ','
     << csv_number(r.budget) << ',' << csv_number(r.c_int) << ',' << csv_number(r.c_int_raw) << ','
     << csv_number(r.c_reg) << ',' << csv_number(r.input_predictability) << ',' << csv_number(r.behavior_rmse) << ','
     << csv_number(r.counterfactual_rmse) << ',' << csv_number(r.b_error) << ',' << csv_number(r.lambda) << ','
     << csv_number(r.bound_fixed) << ',' << csv_number(r.bound_martingale) << ',' << csv_number(r.crlb_var) << ','
     << csv_number(r.cert_margin) << ',' << r.diverged_segments << ',' << r.status;
  return os.str();
}

// --- configuration -----------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

struct BoundSettings {
  double lambda = 1e-6;
  double delta = 0.05;
  double c_abs = 1.0;
};

struct ScalarSweepConfig {
  std::vector<double> epsilons{0.0, 0.01, 0.03, 0.1, 0.3, 1.0};
  std::vector<long> sample_sizes{50, 100, 200, 400, 800};
  int seeds = 50;
  std::uint64_t seed_offset = 0;
  double a = 0.85;
  double b = 0.6;
  double sigma_e = 0.02;
  double kappa = -0.7;
  double x0 = 0.0;
  int probes = 500;
  double probe_input_bound = 1.0;
  BoundSettings bounds;

  static ScalarSweepConfig from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"experiment", "epsilons", "N", "seeds", "seed_offset", "a", "b", "sigma_e", "kappa",
                                    "x0", "probes", "probe_input_bound", "bounds"},
                                "scalar config");
    ScalarSweepConfig c;
    detail::read_key(j, "epsilons", c.epsilons);
    detail::read_key(j, "N", c.sample_sizes);
    detail::read_key(j, "seeds", c.seeds);
    detail::read_key(j, "seed_offset", c.seed_offset);
    detail::read_key(j, "a", c.a);
    detail::read_key(j, "b", c.b);
    detail::read_key(j, "sigma_e", c.sigma_e);
    detail::read_key(j, "kappa", c.kappa);
    detail::read_key(j, "x0", c.x0);
    detail::read_key(j, "probes", c.probes);
    detail::read_key(j, "probe_input_bound", c.probe_input_bound);
    if (j.contains("bounds")) {
      const auto& bj = j.at("bounds");
      detail::reject_unknown_keys(bj, {"lambda", "delta", "c_abs"}, "bounds");
      detail::read_key(bj, "lambda", c.bounds.lambda);
      detail::read_key(bj, "delta", c.bounds.delta);
      detail::read_key(bj, "c_abs", c.bounds.c_abs);
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (epsilons.empty() || sample_sizes.empty()) throw ConfigError("scalar grid is empty");
    for (double e : epsilons) {
      if (!(e >= 0.0)) throw ConfigError("epsilons must be nonnegative");
    }
    for (long n : sample_sizes) {
      if (n < 2) throw ConfigError("N values must be >= 2");
    }
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (probes < 1) throw ConfigError("probes must be >= 1");
    if (sigma_e < 0.0) throw ConfigError("sigma_e must be nonnegative");
    if (!(bounds.lambda > 0.0)) throw ConfigError("bounds.lambda must be positive");
    if (!(bounds.delta > 0.0 && bounds.delta < 1.0)) throw ConfigError("bounds.delta must lie in (0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"experiment", "scalar"},
            {"epsilons", epsilons},
            {"N", sample_sizes},
            {"seeds", seeds},
            {"seed_offset", seed_offset},
            {"a", a},
            {"b", b},
            {"sigma_e", sigma_e},
            {"kappa", kappa},
            {"x0", x0},
            {"probes", probes},
            {"probe_input_bound", probe_input_bound},
            {"bounds", {{"lambda", bounds.lambda}, {"delta", bounds.delta}, {"c_abs", bounds.c_abs}}}};
  }
};

struct DitherSweepConfig {
  std::vector<std::string> systems{"duffing", "van_der_pol"};
  std::vector<int> budgets{20, 40, 80};
  std::vector<double> dithers{0.0, 0.02, 0.05, 0.1, 0.2, 0.5};
  int seeds = 20;
  std::uint64_t seed_offset = 0;
  int segment_length = 12;
  int steps_per_sample = 1;
  double dt = 0.01;
  double input_bound = 1.0;
  std::vector<double> gain{-1.0, -1.0};
  double x0_half_width = 0.1;
  int degree = 3;
  bool include_constant = false;
  std::vector<double> ridge_grid = default_ridge_grid();
  int probes = 500;
  double test_fraction = 0.2;
  double duffing_delta = 0.5;
  double duffing_alpha = -1.0;
  double duffing_beta = 1.0;
  double vdp_mu = 1.0;

  static DitherSweepConfig from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"experiment", "systems", "budgets", "dithers", "seeds", "seed_offset", "segment_length", "steps_per_sample",
            "dt", "input_bound", "gain", "x0_half_width", "dictionary", "ridge_grid", "probes", "test_fraction",
            "duffing", "van_der_pol"},
        "dither config");
    DitherSweepConfig c;
    detail::read_key(j, "systems", c.systems);
    detail::read_key(j, "budgets", c.budgets);
    detail::read_key(j, "dithers", c.dithers);
    detail::read_key(j, "seeds", c.seeds);
    detail::read_key(j, "seed_offset", c.seed_offset);
    detail::read_key(j, "segment_length", c.segment_length);
    detail::read_key(j, "steps_per_sample", c.steps_per_sample);
    detail::read_key(j, "dt", c.dt);
    detail::read_key(j, "input_bound", c.input_bound);
    detail::read_key(j, "gain", c.gain);
    detail::read_key(j, "x0_half_width", c.x0_half_width);
    detail::read_key(j, "ridge_grid", c.ridge_grid);
    detail::read_key(j, "probes", c.probes);
    detail::read_key(j, "test_fraction", c.test_fraction);
    if (j.contains("dictionary")) {
      const auto& dj = j.at("dictionary");
      detail::reject_unknown_keys(dj, {"kind", "degree", "include_constant"}, "dictionary");
      if (dj.value("kind", std::string("polynomial")) != "polynomial") {
        throw ConfigError("dither sweep needs a polynomial dictionary");
      }
      detail::read_key(dj, "degree", c.degree);
      detail::read_key(dj, "include_constant", c.include_constant);
    }
    if (j.contains("duffing")) {
      const auto& dj = j.at("duffing");
      detail::reject_unknown_keys(dj, {"delta", "alpha_c", "beta_c"}, "duffing");
      detail::read_key(dj, "delta", c.duffing_delta);
      detail::read_key(dj, "alpha_c", c.duffing_alpha);
      detail::read_key(dj, "beta_c", c.duffing_beta);
    }
    if (j.contains("van_der_pol")) {
      const auto& vj = j.at("van_der_pol");
      detail::reject_unknown_keys(vj, {"mu"}, "van_der_pol");
      detail::read_key(vj, "mu", c.vdp_mu);
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (systems.empty() || budgets.empty() || dithers.empty()) throw ConfigError("dither grid is empty");
    for (const auto& s : systems) {
      if (system_kind_from_string(s) == SystemKind::scalar_linear) throw ConfigError("dither sweep needs continuous systems");
    }
    for (int b : budgets) {
      if (b < 1) throw ConfigError("budgets must be >= 1");
    }
    for (double d : dithers) {
      if (!(d >= 0.0)) throw ConfigError("dithers must be nonnegative");
    }
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (segment_length < 2) throw ConfigError("segment_length must be >= 2");
    if (steps_per_sample < 1) throw ConfigError("steps_per_sample must be >= 1");
    if (!(dt > 0.0) || !(input_bound > 0.0)) throw ConfigError("dt and input_bound must be positive");
    if (gain.size() != 2) throw ConfigError("gain must have two entries");
    if (!(x0_half_width > 0.0)) throw ConfigError("x0_half_width must be positive");
    if (degree < 1) throw ConfigError("dictionary degree must be >= 1");
    if (ridge_grid.empty()) throw ConfigError("ridge_grid is empty");
    if (probes < 1) throw ConfigError("probes must be >= 1");
    if (!(test_fraction > 0.0)) throw ConfigError("test_fraction must be positive");
  }

  nlohmann::json to_json() const {
    return {{"experiment", "dither"},
            {"systems", systems},
            {"budgets", budgets},
            {"dithers", dithers},
            {"seeds", seeds},
            {"seed_offset", seed_offset},
            {"segment_length", segment_length},
            {"steps_per_sample", steps_per_sample},
            {"dt", dt},
            {"input_bound", input_bound},
            {"gain", gain},
            {"x0_half_width", x0_half_width},
            {"dictionary", {{"kind", "polynomial"}, {"degree", degree}, {"include_constant", include_constant}}},
            {"ridge_grid", ridge_grid},
            {"probes", probes},
            {"test_fraction", test_fraction},
            {"duffing", {{"delta", duffing_delta}, {"alpha_c", duffing_alpha}, {"beta_c", duffing_beta}}},
            {"van_der_pol", {{"mu", vdp_mu}}}};
  }

  SystemSpec system_spec(const std::string& name) const {
    switch (system_kind_from_string(name)) {
      case SystemKind::duffing:
        return duffing_system(duffing_delta, duffing_alpha, duffing_beta, dt, input_bound);
      case SystemKind::van_der_pol:
        return van_der_pol_system(vdp_mu, dt, input_bound);
      case SystemKind::scalar_linear:
        break;
    }
    throw ConfigError("dither sweep needs continuous systems");
  }
};

/// FNV-1a over the canonical JSON dump; stable across platforms.
inline std::string config_hash(const nlohmann::json& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- metrics -----------------------------------------------------------------

inline double rmse(const std::vector<double>& squared_errors) {
  if (squared_errors.empty()) return kNotAvailable;
  double acc = 0.0;
  for (double e : squared_errors) acc += e;
  return std::sqrt(acc / static_cast<double>(squared_errors.size()));
}

/// One-step RMSE of the predicted next state (identity coordinates) over
/// every transition of `test`, averaged over state components.
inline double behavior_rmse(const EdmdcModel& model, const TransitionDataset& test) {
  std::vector<double> sq;
  for (const Segment& seg : test.segments) {
    for (std::size_t t = 0; t < seg.inputs.size(); ++t) {
      const Vector pred = predict_one_step(model, seg.states[t], seg.inputs[t]).state;
      const Vector err = pred - seg.states[t + 1];
      for (Eigen::Index i = 0; i < err.size(); ++i) sq.push_back(err(i) * err(i));
    }
  }
  return rmse(sq);
}

struct CounterfactualResult {
  double counterfactual_rmse = kNotAvailable;
  double b_error = kNotAvailable;  // scalar system only
};

/// Probes: states drawn uniformly from the identification dataset's visited
/// states (those followed by an input), inputs uniform on [-input_bound,
/// input_bound]; truth is the noiseless one-step map.
inline CounterfactualResult counterfactual_eval(const EdmdcModel& model, const SystemSpec& sys,
                                                const TransitionDataset& ident, double input_bound, int steps_per_sample,
                                                int num_probes, std::uint64_t seed) {
  std::vector<const Vector*> visited;
  for (const Segment& seg : ident.segments) {
    for (std::size_t t = 0; t < seg.inputs.size(); ++t) visited.push_back(&seg.states[t]);
  }
  if (visited.empty()) throw ConfigError("counterfactual evaluation needs a nonempty dataset");
  if (num_probes < 1) throw ConfigError("num_probes must be >= 1");
  Pcg64 rng(seed, 0xcf);
  std::uniform_real_distribution<double> unif(-input_bound, input_bound);
  std::vector<double> sq;
  const int m = sys.input_dim();
  for (int p = 0; p < num_probes; ++p) {
    const auto idx = static_cast<std::size_t>(rng() % visited.size());
    const Vector& x = *visited[idx];
    Vector u(m);
    for (int j = 0; j < m; ++j) u(j) = unif(rng);
    const Vector truth = true_next_state(sys, x, u, steps_per_sample);
    const Vector err = predict_one_step(model, x, u).state - truth;
    for (Eigen::Index i = 0; i < err.size(); ++i) sq.push_back(err(i) * err(i));
  }
  CounterfactualResult out;
  out.counterfactual_rmse = rmse(sq);
  if (sys.kind == SystemKind::scalar_linear) out.b_error = std::abs(model.raw_B()(0, 0) - sys.param("b"));
  return out;
}

// --- scalar sweep --------------------------------------------------------------

namespace detail {

enum StreamTag : std::uint64_t { kIdent = 1, kBehaviorTest = 2, kProbe = 3, kSplit = 4 };

inline std::uint64_t cell_seed(std::uint64_t seed, std::uint64_t setting, StreamTag tag) {
  return derive_seed(derive_seed(seed, setting), tag);
}

/// Scalar identification in raw (uncentered, unscaled) coordinates, the frame
/// in which the true model is Y = a Z + b U + E.
inline LiftedRegressionData raw_frame(const RawLiftedMatrices& raw) {
  return standardize(raw, std::vector<bool>(static_cast<std::size_t>(raw.Z.rows()), true), {false, false});
}

}  // namespace detail

/// Bound evaluation for scalar data with known (a, b, sigma): raw-frame ridge fit,
/// fixed-design and adapted-noise bounds, and the feedback margin slack.
struct ScalarBoundEvaluation {
  double b_ridge_error = kNotAvailable;
  double bound_fixed = kNotAvailable;
  double bound_martingale = kNotAvailable;
  double bound_joint = kNotAvailable;
  double cert_margin = kNotAvailable;
  BoundInputs inputs;
};

inline ScalarBoundEvaluation evaluate_scalar_bounds(const RawLiftedMatrices& raw, double a, double b, double sigma,
                                                    double kappa, const BoundSettings& settings) {
  ScalarBoundEvaluation ev;
  const LiftedRegressionData frame = detail::raw_frame(raw);
  const EdmdcModel ridge = fit_ridge(frame, settings.lambda);
  ev.b_ridge_error = std::abs(ridge.B(0, 0) - b);
  BoundInputs in = bound_inputs_from_data(frame.Z, frame.U, settings.lambda, 1);
  in.sigma = sigma;
  in.delta = settings.delta;
  in.c_abs = settings.c_abs;
  in.K_star_norm = std::hypot(a, b);
  ev.inputs = in;
  ev.bound_fixed = fixed_design_bound(in);
  try {
    ev.bound_martingale = martingale_bound(in);
    const Matrix vn = frame.Phi * frame.Phi.transpose() + settings.lambda * Matrix::Identity(2, 2);
    ev.bound_joint = joint_martingale_bound(in, linalg::min_sym_eigenvalue(vn));
  } catch (const Error&) {
    return ev;
  }
  // Lifted feedback u = kappa z on the ridge model, P from the Lyapunov equation with alpha = 1.
  const Matrix gain = Matrix::Constant(1, 1, kappa);
  const Matrix f = ridge.A + ridge.B * gain;
  if (linalg::spectral_radius(f) < 1.0) {
    const Matrix p = solve_discrete_lyapunov(f, 1.0);
    ev.cert_margin = feedback_margin_check(ridge.A, ridge.B, gain, p, 1.0, ev.bound_joint, ev.bound_martingale).margin_slack;
  }
  return ev;
}

inline ExperimentRecord run_scalar_cell(const ScalarSweepConfig& cfg, double eps, long N, std::uint64_t seed) {
  ExperimentRecord rec;
  rec.experiment = "scalar";
  rec.system = "scalar_linear";
  rec.seed = seed;
  rec.N = N;
  rec.epsilon = eps;
  const SystemSpec sys = scalar_system(cfg.a, cfg.b, cfg.sigma_e);
  const PolicySpec policy = scalar_policy(cfg.kappa, eps);
  // Streams depend on (seed, N) but not eps: cells differing only in eps share noise.
  const auto setting = static_cast<std::uint64_t>(N);
  const TransitionDataset ident =
      simulate_scalar(sys, policy, N, cfg.x0, detail::cell_seed(seed, setting, detail::kIdent));
  const DictionarySpec dict = build_dictionary(DictionaryKind::identity, 1);
  const RawLiftedMatrices raw = assemble(ident, dict);
  const std::vector<bool> mask = select_active(raw.Z);
  const LiftedRegressionData data = standardize(raw, mask);
  const CertificateReport cert = certify(data);
  rec.c_int = cert.c_int;
  rec.c_reg = cert.c_reg;
  rec.input_predictability = cert.input_predictability;
  const LiftedRegressionData centered = standardize(raw, mask, {true, false});
  rec.c_int_raw = c_int(centered.Z, centered.U);

  const EdmdcModel model = fit_ls(data);
  rec.lambda = 0.0;
  const TransitionDataset test =
      simulate_scalar(sys, policy, N, cfg.x0, detail::cell_seed(seed, setting, detail::kBehaviorTest));
  rec.behavior_rmse = behavior_rmse(model, test);
  const CounterfactualResult cf = counterfactual_eval(model, sys, ident, cfg.probe_input_bound, 1, cfg.probes,
                                                      detail::cell_seed(seed, setting, detail::kProbe));
  rec.counterfactual_rmse = cf.counterfactual_rmse;
  rec.b_error = cf.b_error;

  const ScalarBoundEvaluation ev = evaluate_scalar_bounds(raw, cfg.a, cfg.b, cfg.sigma_e, cfg.kappa, cfg.bounds);
  rec.bound_fixed = ev.bound_fixed;
  rec.bound_martingale = ev.bound_martingale;
  rec.cert_margin = ev.cert_margin;
  rec.crlb_var = crlb(cfg.sigma_e, N, eps);
  return rec;
}

// --- dither sweep --------------------------------------------------------------

struct DitherCellData {
  ControlledSimulation ident;
  ControlledSimulation test;
  LiftedRegressionData data;
  EdmdcModel model;
  RidgeSelection ridge;
};

inline std::uint64_t dither_setting_id(const std::string& system, int budget) {
  return static_cast<std::uint64_t>(system_kind_from_string(system)) * 1000003ULL + static_cast<std::uint64_t>(budget);
}

inline PolicySpec dither_policy(const DitherSweepConfig& cfg, double dither) {
  PolicySpec policy;
  policy.gain = Matrix(1, 2);
  policy.gain << cfg.gain[0], cfg.gain[1];
  policy.dither_scale = dither;
  policy.clip = true;
  return policy;
}

/// Streams depend on (seed, system, budget) but not the dither level, so the
/// initial states and dither draws are shared across dither levels.
inline DitherCellData fit_dither_cell(const DitherSweepConfig& cfg, const std::string& system, int budget,
                                      double dither, std::uint64_t seed) {
  const SystemSpec sys = cfg.system_spec(system);
  const PolicySpec policy = dither_policy(cfg, dither);
  const std::uint64_t setting = dither_setting_id(system, budget);
  const InitialBox box{cfg.x0_half_width};
  DitherCellData cell;
  cell.ident = simulate_controlled(sys, policy, budget, cfg.segment_length, cfg.steps_per_sample, box,
                                   detail::cell_seed(seed, setting, detail::kIdent));
  if (cell.ident.data.segments.empty()) throw DegenerateDataError("every identification segment diverged");
  const auto test_segments = std::max(1, static_cast<int>(std::ceil(cfg.test_fraction * budget)));
  cell.test = simulate_controlled(sys, policy, test_segments, cfg.segment_length, cfg.steps_per_sample, box,
                                  detail::cell_seed(seed, setting, detail::kBehaviorTest));
  const DictionarySpec dict = build_dictionary(DictionaryKind::polynomial, 2, cfg.degree, cfg.include_constant);
  cell.data = prepare(cell.ident.data, dict);
  cell.ridge = select_ridge_detailed(cell.data, cfg.ridge_grid, detail::cell_seed(seed, setting, detail::kSplit));
  cell.model = fit_ridge(cell.data, cell.ridge.lambda);
  return cell;
}

inline ExperimentRecord run_dither_cell(const DitherSweepConfig& cfg, const std::string& system, int budget,
                                        double dither, std::uint64_t seed) {
  ExperimentRecord rec;
  rec.experiment = "dither";
  rec.system = std::string(to_string(system_kind_from_string(system)));
  rec.seed = seed;
  rec.epsilon = dither;
  rec.budget = budget;
  const DitherCellData cell = fit_dither_cell(cfg, system, budget, dither, seed);
  rec.N = static_cast<long>(cell.data.N());
  rec.diverged_segments = cell.ident.diverged_segments + cell.test.diverged_segments;
  const CertificateReport cert = certify(cell.data);
  rec.c_int = cert.c_int;
  rec.c_reg = cert.c_reg;
  rec.input_predictability = cert.input_predictability;
  const RawLiftedMatrices raw = assemble(cell.ident.data, cell.data.dict);
  const LiftedRegressionData centered = standardize(raw, cell.data.stats.active_mask, {true, false});
  rec.c_int_raw = c_int(centered.Z, centered.U);
  rec.lambda = cell.model.lambda;
  if (!cell.test.data.segments.empty()) rec.behavior_rmse = behavior_rmse(cell.model, cell.test.data);
  const SystemSpec sys = cfg.system_spec(system);
  const CounterfactualResult cf =
      counterfactual_eval(cell.model, sys, cell.ident.data, cfg.input_bound, cfg.steps_per_sample, cfg.probes,
                          detail::cell_seed(seed, dither_setting_id(system, budget), detail::kProbe));
  rec.counterfactual_rmse = cf.counterfactual_rmse;
  return rec;
}

// --- orchestration -------------------------------------------------------------

/// Runs fn(i) for i in [0, count) on `jobs` worker threads. Each index is
/// processed exactly once; results land in caller-owned slots.
inline void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

struct ScalarCell {
  double epsilon;
  long N;
  std::uint64_t seed;
};

struct DitherCell {
  std::string system;
  int budget;
  double dither;
  std::uint64_t seed;
};

/// Cells sorted by (epsilon, N, seed).
inline std::vector<ScalarCell> scalar_cells(const ScalarSweepConfig& cfg) {
  std::vector<double> eps = cfg.epsilons;
  std::vector<long> ns = cfg.sample_sizes;
  std::sort(eps.begin(), eps.end());
  eps.erase(std::unique(eps.begin(), eps.end()), eps.end());
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  std::vector<ScalarCell> cells;
  for (double e : eps) {
    for (long n : ns) {
      for (int s = 0; s < cfg.seeds; ++s) cells.push_back({e, n, cfg.seed_offset + static_cast<std::uint64_t>(s)});
    }
  }
  return cells;
}

/// Cells sorted by (system, budget, dither, seed).
inline std::vector<DitherCell> dither_cells(const DitherSweepConfig& cfg) {
  std::vector<std::string> systems;
  for (const auto& s : cfg.systems) systems.emplace_back(to_string(system_kind_from_string(s)));
  std::sort(systems.begin(), systems.end());
  systems.erase(std::unique(systems.begin(), systems.end()), systems.end());
  std::vector<int> budgets = cfg.budgets;
  std::sort(budgets.begin(), budgets.end());
  budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
  std::vector<double> dithers = cfg.dithers;
  std::sort(dithers.begin(), dithers.end());
  dithers.erase(std::unique(dithers.begin(), dithers.end()), dithers.end());
  std::vector<DitherCell> cells;
  for (const auto& sys : systems) {
    for (int b : budgets) {
      for (double d : dithers) {
        for (int s = 0; s < cfg.seeds; ++s) cells.push_back({sys, b, d, cfg.seed_offset + static_cast<std::uint64_t>(s)});
      }
    }
  }
  return cells;
}

inline std::string cell_key(const ScalarCell& c) {
  return "scalar|" + format_double(c.epsilon) + "|" + std::to_string(c.N) + "|" + std::to_string(c.seed);
}

inline std::string cell_key(const DitherCell& c) {
  return "dither|" + c.system + "|" + format_double(c.dither) + "|" + std::to_string(c.budget) + "|" +
         std::to_string(c.seed);
}

/// Key of the cell that produced `r`; matches cell_key of that cell.
inline std::string cell_key(const ExperimentRecord& r) {
  if (r.experiment == "dither") {
    return cell_key(DitherCell{r.system, static_cast<int>(r.budget), r.epsilon, r.seed});
  }
  return cell_key(ScalarCell{r.epsilon, r.N, r.seed});
}

/// Failure of one cell is recorded in its status column instead of aborting
/// the sweep.
template <typename Cell, typename Run, typename Fallback>
std::vector<ExperimentRecord> run_cells(const std::vector<Cell>& cells, int jobs, Run run, Fallback fallback) {
  std::vector<ExperimentRecord> out(cells.size());
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    try {
      out[i] = run(cells[i]);
    } catch (const std::exception& e) {
      out[i] = fallback(cells[i]);
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), ',', ';');
      out[i].status = "error: " + msg;
    }
  });
  return out;
}

namespace detail {

/// Reuses rows of `previous` whose cell is in the grid and whose status is
/// "ok"; runs the rest. Output follows the grid order.
template <typename Cell, typename Run, typename Fallback>
std::vector<ExperimentRecord> run_or_reuse(const std::vector<Cell>& cells, int jobs, Run run, Fallback fallback,
                                           const std::vector<ExperimentRecord>* previous) {
  std::map<std::string, const ExperimentRecord*> done;
  if (previous) {
    for (const auto& r : *previous) {
      if (r.status == "ok") done[cell_key(r)] = &r;
    }
  }
  std::vector<Cell> todo;
  for (const auto& c : cells) {
    if (!done.count(cell_key(c))) todo.push_back(c);
  }
  const std::vector<ExperimentRecord> fresh = run_cells(todo, jobs, run, fallback);
  std::vector<ExperimentRecord> out;
  out.reserve(cells.size());
  std::size_t k = 0;
  for (const auto& c : cells) {
    const auto it = done.find(cell_key(c));
    out.push_back(it != done.end() ? *it->second : fresh[k++]);
  }
  return out;
}

}  // namespace detail

inline std::vector<ExperimentRecord> run_scalar_sweep(const ScalarSweepConfig& cfg, int jobs = 1,
                                                      const std::vector<ExperimentRecord>* previous = nullptr) {
  cfg.validate();
  return detail::run_or_reuse(
      scalar_cells(cfg), jobs, [&](const ScalarCell& c) { return run_scalar_cell(cfg, c.epsilon, c.N, c.seed); },
      [](const ScalarCell& c) {
        ExperimentRecord r;
        r.experiment = "scalar";
        r.system = "scalar_linear";
        r.seed = c.seed;
        r.N = c.N;
        r.epsilon = c.epsilon;
        return r;
      },
      previous);
}

inline std::vector<ExperimentRecord> run_dither_sweep(const DitherSweepConfig& cfg, int jobs = 1,
                                                      const std::vector<ExperimentRecord>* previous = nullptr) {
  cfg.validate();
  return detail::run_or_reuse(
      dither_cells(cfg), jobs,
      [&](const DitherCell& c) { return run_dither_cell(cfg, c.system, c.budget, c.dither, c.seed); },
      [](const DitherCell& c) {
        ExperimentRecord r;
        r.experiment = "dither";
        r.system = c.system;
        r.seed = c.seed;
        r.epsilon = c.dither;
        r.budget = c.budget;
        return r;
      },
      previous);
}

inline void write_records_csv(std::ostream& os, const std::vector<ExperimentRecord>& records) {
  os << kRecordCsvHeader << '\n';
  for (const auto& r : records) os << to_csv_line(r) << '\n';
}

}  // namespace koopcert
