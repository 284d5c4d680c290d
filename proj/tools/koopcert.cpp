// koopcert command-line front end: certify, fit, simulate, sweep, report.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "koopcert/koopcert.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace koopcert;

namespace {

enum ExitCode { kOk = 0, kRuntimeError = 1, kGate = 2, kAcceptanceFail = 3 };

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in '" + path + "': " + e.what());
  }
}

fs::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("KOOPCERT_OUT")) return env;
  return "koopcert_out";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  os << text;
}

struct DictOptions {
  std::string config;
  std::string kind = "polynomial";
  int degree = 1;
  bool include_constant = false;

  void add(CLI::App* app) {
    app->add_option("--dict-config", config, "JSON file {kind, n, degree, include_constant}");
    app->add_option("--dictionary", kind, "identity or polynomial")->check(CLI::IsMember({"identity", "polynomial"}));
    app->add_option("--degree", degree, "polynomial degree")->check(CLI::PositiveNumber);
    app->add_flag("--constant", include_constant, "include the constant monomial");
  }

  DictionarySpec build(int n) const {
    if (!config.empty()) {
      json j = read_json_file(config);
      if (!j.contains("n")) j["n"] = n;
      const DictionarySpec d = dictionary_from_json(j);
      if (d.state_dim != n) throw ConfigError("dictionary n does not match the dataset");
      return d;
    }
    return build_dictionary(dictionary_kind_from_string(kind), n, degree, include_constant);
  }
};

// --- certify -------------------------------------------------------------------

struct CertifyArgs {
  std::string dataset;
  DictOptions dict;
  double lambda = kDefaultCertLambda;
  double threshold_creg = 1e-8;
  double threshold_cint = 1e-8;
  std::string out;
};

std::string verdict(const CertificateReport& r, double creg_thr, double cint_thr) {
  if (r.c_int <= cint_thr) return "CONTROL-CHANNEL-DEFICIENT";
  if (r.c_reg <= creg_thr) return "ILL-CONDITIONED-JOINT";
  return "WELL-CONDITIONED";
}

int cmd_certify(const CertifyArgs& a) {
  const TransitionDataset data = load_dataset(a.dataset);
  const LiftedRegressionData lifted = prepare(data, a.dict.build(data.n));
  const CertificateReport r = certify(lifted, a.lambda);
  const std::string v = verdict(r, a.threshold_creg, a.threshold_cint);
  std::cout << "N " << r.N << "\nd_active " << r.d_active << "\nm " << r.m << "\nc_reg " << format_double(r.c_reg)
            << "\nc_int " << format_double(r.c_int) << "\ns_min_reg " << format_double(r.s_min_reg) << " (lambda "
            << format_double(r.lambda) << ")\ninput_predictability " << format_double(r.input_predictability)
            << (r.predictability_degenerate ? " (degenerate input)" : "") << "\nverdict " << v << '\n';
  if (!a.out.empty()) {
    write_text(a.out, std::string(kCertificateCsvHeader) + ",verdict\n" + to_csv_row(r) + "," + v + "\n");
  }
  return v == "WELL-CONDITIONED" ? kOk : kGate;
}

// --- fit -----------------------------------------------------------------------

struct FitArgs {
  std::string dataset;
  std::string config;
  DictOptions dict;
  std::optional<double> lambda;
  double threshold_cint = 1e-8;
  bool force = false;
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_fit(FitArgs a) {
  std::vector<double> grid = default_ridge_grid();
  if (!a.config.empty()) {
    const json j = read_json_file(a.config);
    detail::reject_unknown_keys(j, {"dictionary", "lambda", "ridge_grid", "seed", "threshold_cint"}, "fit config");
    if (j.contains("dictionary") && a.dict.config.empty()) {
      const auto& dj = j.at("dictionary");
      detail::reject_unknown_keys(dj, {"kind", "degree", "include_constant", "n"}, "dictionary");
      a.dict.kind = dj.value("kind", a.dict.kind);
      a.dict.degree = dj.value("degree", a.dict.degree);
      a.dict.include_constant = dj.value("include_constant", a.dict.include_constant);
    }
    if (j.contains("ridge_grid")) grid = j.at("ridge_grid").get<std::vector<double>>();
    if (j.contains("lambda") && !a.lambda) a.lambda = j.at("lambda").get<double>();
    if (j.contains("seed")) a.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("threshold_cint")) a.threshold_cint = j.at("threshold_cint").get<double>();
  }
  const TransitionDataset data = load_dataset(a.dataset);
  const LiftedRegressionData lifted = prepare(data, a.dict.build(data.n));
  const double lambda = a.lambda ? *a.lambda : select_ridge(lifted, grid, a.seed);
  EdmdcModel model = fit_ridge(lifted, lambda);
  const CertificateReport cert = certify(lifted);

  const Matrix resid = lifted.Y - model.A * lifted.Z - model.B * lifted.U;
  std::cerr << "fit: N " << lifted.N() << ", d_active " << lifted.d() << ", lambda " << format_double(lambda)
            << ", in-sample rmse " << format_double(std::sqrt(resid.squaredNorm() / static_cast<double>(resid.size())))
            << ", c_int " << format_double(cert.c_int) << '\n';

  json j;
  int code = kOk;
  if (cert.c_int <= a.threshold_cint) {
    if (a.force) {
      model.nonidentifiable_b = true;
      j = to_json(model);
      std::cerr << "warning: c_int below threshold; B emitted because of --force (NONIDENTIFIABLE_B)\n";
    } else {
      j = to_json(model);
      j.erase("B");
      j["warning"] = "NONIDENTIFIABLE_B";
      j["note"] = "B omitted: control channel not identifiable from these data; rerun with --force to emit it";
      std::cerr << "warning: c_int below threshold; emitting A only\n";
      code = kGate;
    }
  } else {
    j = to_json(model);
  }
  j["c_int"] = cert.c_int;
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
  }
  return code;
}

// --- simulate ------------------------------------------------------------------

struct SimulateArgs {
  std::string system = "scalar";
  double epsilon = 0.0;
  long N = 800;
  int segments = 80;
  int segment_length = 12;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
  TransitionDataset data;
  if (system_kind_from_string(a.system) == SystemKind::scalar_linear) {
    data = simulate_scalar(scalar_system(), scalar_policy(-0.7, a.epsilon), a.N, 0.0, a.seed);
  } else {
    const DitherSweepConfig cfg;
    const ControlledSimulation sim =
        simulate_controlled(cfg.system_spec(a.system), dither_policy(cfg, a.epsilon), a.segments, a.segment_length,
                            cfg.steps_per_sample, InitialBox{cfg.x0_half_width}, a.seed);
    if (sim.diverged_segments > 0) std::cerr << "warning: " << sim.diverged_segments << " diverged segments dropped\n";
    data = sim.data;
  }
  if (a.out.empty()) {
    write_dataset_csv(std::cout, data);
  } else {
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    save_dataset(a.out, data);
  }
  return kOk;
}

// --- sweep ---------------------------------------------------------------------

struct SweepArgs {
  std::string kind;
  std::string config;
  std::string out;
  int jobs = 1;
  std::optional<std::uint64_t> seed_offset;
  bool resume = false;
};

void update_manifest(const fs::path& dir, const std::string& kind, const json& canonical,
                     const std::vector<ExperimentRecord>& records) {
  const fs::path path = dir / "manifest.json";
  json manifest = json::object();
  if (fs::exists(path)) {
    std::ifstream is(path);
    manifest = json::parse(is, nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object()) manifest = json::object();
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& r : records) seeds.push_back(r.seed);
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.status != "ok";
  manifest["software_version"] = kSoftwareVersion;
  manifest[kind] = {{"config_hash", config_hash(canonical)},
                    {"config", canonical},
                    {"seeds", seeds},
                    {"rows", records.size()},
                    {"failed_rows", failed},
                    {"csv", kind + "_sweep.csv"}};
  write_text(path, manifest.dump(2) + "\n");
}

std::optional<std::string> manifest_hash(const fs::path& dir, const std::string& kind) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream is(path);
  const json m = json::parse(is, nullptr, false);
  if (m.is_discarded() || !m.contains(kind)) return std::nullopt;
  return m.at(kind).value("config_hash", std::string());
}

int cmd_sweep(const SweepArgs& a) {
  json cfg_json = a.config.empty() ? json::object() : read_json_file(a.config);
  if (cfg_json.contains("experiment") && cfg_json.at("experiment") != a.kind) {
    throw ConfigError("config is for experiment '" + cfg_json.at("experiment").get<std::string>() + "'");
  }
  if (a.seed_offset) cfg_json["seed_offset"] = *a.seed_offset;
  const fs::path dir = output_root(a.out);
  fs::create_directories(dir);
  const fs::path csv_path = dir / (a.kind + "_sweep.csv");

  json canonical;
  std::optional<ScalarSweepConfig> scfg;
  std::optional<DitherSweepConfig> dcfg;
  if (a.kind == "scalar") {
    scfg = ScalarSweepConfig::from_json(cfg_json);
    canonical = scfg->to_json();
  } else {
    dcfg = DitherSweepConfig::from_json(cfg_json);
    canonical = dcfg->to_json();
  }

  std::vector<ExperimentRecord> previous;
  bool have_previous = false;
  if (a.resume && fs::exists(csv_path)) {
    const auto h = manifest_hash(dir, a.kind);
    if (h && *h == config_hash(canonical)) {
      previous = load_records(csv_path);
      have_previous = true;
    } else {
      std::cerr << "resume: config hash differs from the manifest; recomputing every cell\n";
    }
  }
  const auto* prev = have_previous ? &previous : nullptr;
  const std::vector<ExperimentRecord> records =
      scfg ? run_scalar_sweep(*scfg, a.jobs, prev) : run_dither_sweep(*dcfg, a.jobs, prev);

  std::ostringstream os;
  write_records_csv(os, records);
  write_text(csv_path, os.str());
  update_manifest(dir, a.kind, canonical, records);
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.status != "ok";
  std::cerr << "wrote " << records.size() << " rows to " << csv_path.string() << " (" << failed << " failed)\n";
  return kOk;
}

// --- report --------------------------------------------------------------------

struct ReportArgs {
  std::string dir;
  std::string checks;
  bool no_checks = false;
};

int cmd_report(const ReportArgs& a) {
  const fs::path dir = output_root(a.dir);
  std::vector<ExperimentRecord> records;
  bool have_scalar = false;
  for (const std::string kind : {"scalar", "dither"}) {
    const fs::path p = dir / (kind + "_sweep.csv");
    if (!fs::exists(p)) continue;
    auto rows = load_records(p);
    have_scalar |= kind == "scalar" && !rows.empty();
    records.insert(records.end(), rows.begin(), rows.end());
  }
  if (records.empty()) throw DegenerateDataError("no sweep data in '" + dir.string() + "'");

  std::ostringstream summary;
  write_summary_csv(summary, aggregate(records));
  write_text(dir / "summary.csv", summary.str());

  std::vector<NamedSlope> slopes;
  if (have_scalar) {
    slopes = scalar_slopes(records);
    std::ostringstream os;
    write_slopes_csv(os, slopes);
    write_text(dir / "slopes.csv", os.str());
    for (const auto& s : slopes) {
      std::cout << "slope " << s.name << " = " << format_double(s.fit.slope) << " (r^2 " << format_double(s.fit.r_squared)
                << ", " << s.fit.points_used << " points, " << s.fit.points_excluded << " excluded)\n";
    }
  }
  if (a.no_checks) return kOk;

  const json cj = a.checks.empty() ? default_checks_json() : read_json_file(a.checks);
  const auto results = run_checks(checks_from_json(cj), records, slopes);
  bool fail = false;
  for (const auto& r : results) {
    if (r.note == "no data") {
      std::cout << "SKIP " << r.name << " (no data)\n";
      continue;
    }
    print_check_results(std::cout, {r});
    fail |= !r.pass;
  }
  return fail ? kAcceptanceFail : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"koopcert: identifiability certificates for lifted linear models with control"};
  app.require_subcommand(1);

  CertifyArgs certify_args;
  auto* certify_cmd = app.add_subcommand("certify", "compute c_reg, c_int and a verdict for a dataset CSV");
  certify_cmd->add_option("dataset", certify_args.dataset, "dataset CSV")->required();
  certify_args.dict.add(certify_cmd);
  certify_cmd->add_option("--lambda", certify_args.lambda, "ridge parameter for s_min_reg")->check(CLI::PositiveNumber);
  certify_cmd->add_option("--threshold-creg", certify_args.threshold_creg);
  certify_cmd->add_option("--threshold-cint", certify_args.threshold_cint);
  certify_cmd->add_option("--out", certify_args.out, "write the report as CSV");

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "fit an EDMDc model and write it as JSON");
  fit_cmd->add_option("dataset", fit_args.dataset, "dataset CSV")->required();
  fit_cmd->add_option("--config", fit_args.config, "JSON with dictionary, lambda or ridge_grid, seed");
  fit_args.dict.add(fit_cmd);
  fit_cmd->add_option("--lambda", fit_args.lambda, "fixed ridge parameter (skips selection)");
  fit_cmd->add_option("--threshold-cint", fit_args.threshold_cint);
  fit_cmd->add_flag("--force", fit_args.force, "emit B even when c_int is below threshold");
  fit_cmd->add_option("--out", fit_args.out, "model JSON path (default stdout)");
  fit_cmd->add_option("--seed", fit_args.seed, "holdout split seed for ridge selection");

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "write a simulated dataset CSV");
  sim_cmd->add_option("system", sim_args.system, "scalar, duffing or van_der_pol")->required();
  sim_cmd->add_option("--epsilon", sim_args.epsilon, "dither (scalar std, or fraction of the input bound)");
  sim_cmd->add_option("--N", sim_args.N, "transitions (scalar)");
  sim_cmd->add_option("--segments", sim_args.segments, "segments (continuous systems)");
  sim_cmd->add_option("--segment-length", sim_args.segment_length, "states per segment");
  sim_cmd->add_option("--seed", sim_args.seed);
  sim_cmd->add_option("--out", sim_args.out, "CSV path (default stdout)");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "run the scalar or nonlinear dither sweep");
  sweep_cmd->add_option("kind", sweep_args.kind, "scalar or dither")->required()->check(CLI::IsMember({"scalar", "dither"}));
  sweep_cmd->add_option("--config", sweep_args.config, "sweep config JSON (defaults: paper grid)");
  sweep_cmd->add_option("--out", sweep_args.out, "output directory (default $KOOPCERT_OUT or ./koopcert_out)");
  sweep_cmd->add_option("--jobs", sweep_args.jobs, "worker threads")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--seed-offset", sweep_args.seed_offset, "first seed");
  sweep_cmd->add_flag("--resume", sweep_args.resume, "reuse completed cells when the config hash matches");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "summaries, slopes and PASS/FAIL checks over sweep CSVs");
  report_cmd->add_option("dir", report_args.dir, "directory holding *_sweep.csv (default $KOOPCERT_OUT)");
  report_cmd->add_option("--out", report_args.dir, "same as dir");
  report_cmd->add_option("--checks", report_args.checks, "checks JSON (default: built-in thresholds)");
  report_cmd->add_flag("--no-checks", report_args.no_checks);

  auto* config_cmd = app.add_subcommand("default-config", "print the default sweep or checks config");
  std::string config_kind;
  config_cmd->add_option("kind", config_kind)->required()->check(CLI::IsMember({"scalar", "dither", "checks"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kRuntimeError;
  }

  try {
    if (*certify_cmd) return cmd_certify(certify_args);
    if (*fit_cmd) return cmd_fit(fit_args);
    if (*sim_cmd) return cmd_simulate(sim_args);
    if (*sweep_cmd) return cmd_sweep(sweep_args);
    if (*report_cmd) return cmd_report(report_args);
    if (*config_cmd) {
      if (config_kind == "scalar") std::cout << ScalarSweepConfig{}.to_json().dump(2) << '\n';
      if (config_kind == "dither") std::cout << DitherSweepConfig{}.to_json().dump(2) << '\n';
      if (config_kind == "checks") std::cout << default_checks_json().dump(2) << '\n';
      return kOk;
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
