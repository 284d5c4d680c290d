#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "koopcert/dataset_io.hpp"
#include "koopcert/errors.hpp"
#include "koopcert/experiments.hpp"

namespace koopcert {

// --- reading records back ------------------------------------------------------

namespace detail {

inline double parse_metric(const std::string& s, std::size_t row) {
  if (s == "n/a") return kNotAvailable;
  return csv::parse_double(s, row);
}

}  // namespace detail

inline std::vector<ExperimentRecord> read_records_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty record file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRecordCsvHeader) throw ParseError("unexpected record header", 1);
  std::vector<ExperimentRecord> out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto c = csv::split_line(line);
    if (c.size() != 20) throw ParseError("expected 20 columns, got " + std::to_string(c.size()), row);
    ExperimentRecord r;
    r.experiment = c[0];
    r.system = c[1];
    r.seed = static_cast<std::uint64_t>(csv::parse_int(c[2], row));
    r.N = static_cast<long>(csv::parse_int(c[3], row));
    r.epsilon = detail::parse_metric(c[4], row);
    r.budget = detail::parse_metric(c[5], row);
    r.c_int = detail::parse_metric(c[6], row);
    r.c_int_raw = detail::parse_metric(c[7], row);
    r.c_reg = detail::parse_metric(c[8], row);
    r.input_predictability = detail::parse_metric(c[9], row);
    r.behavior_rmse = detail::parse_metric(c[10], row);
    r.counterfactual_rmse = detail::parse_metric(c[11], row);
    r.b_error = detail::parse_metric(c[12], row);
    r.lambda = detail::parse_metric(c[13], row);
    r.bound_fixed = detail::parse_metric(c[14], row);
    r.bound_martingale = detail::parse_metric(c[15], row);
    r.crlb_var = detail::parse_metric(c[16], row);
    r.cert_margin = detail::parse_metric(c[17], row);
    r.diverged_segments = static_cast<int>(csv::parse_int(c[18], row));
    r.status = c[19];
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ExperimentRecord> load_records(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  return read_records_csv(is);
}

// --- statistics ---------------------------------------------------------------

enum class Statistic { median, mean, min, max };

inline std::string_view to_string(Statistic s) {
  switch (s) {
    case Statistic::median: return "median";
    case Statistic::mean: return "mean";
    case Statistic::min: return "min";
    case Statistic::max: return "max";
  }
  return "?";
}

inline Statistic statistic_from_string(std::string_view s) {
  if (s == "median") return Statistic::median;
  if (s == "mean") return Statistic::mean;
  if (s == "min") return Statistic::min;
  if (s == "max") return Statistic::max;
  throw ConfigError("unknown statistic '" + std::string(s) + "'");
}

/// NaN entries are skipped; an empty remainder yields NaN. Even counts take
/// the average of the two middle values.
inline double reduce(std::vector<double> v, Statistic stat) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kNotAvailable;
  switch (stat) {
    case Statistic::median: {
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    case Statistic::mean: {
      double acc = 0.0;
      for (double x : v) acc += x;
      return acc / static_cast<double>(v.size());
    }
    case Statistic::min: return *std::min_element(v.begin(), v.end());
    case Statistic::max: return *std::max_element(v.begin(), v.end());
  }
  return kNotAvailable;
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{
      "c_int",  "c_int_raw", "c_reg",       "input_predictability", "behavior_rmse", "counterfactual_rmse",
      "b_error", "lambda",   "bound_fixed", "bound_martingale",     "crlb_var",      "cert_margin"};
  return names;
}

inline double metric(const ExperimentRecord& r, const std::string& name) {
  if (name == "c_int") return r.c_int;
  if (name == "c_int_raw") return r.c_int_raw;
  if (name == "c_reg") return r.c_reg;
  if (name == "input_predictability") return r.input_predictability;
  if (name == "behavior_rmse") return r.behavior_rmse;
  if (name == "counterfactual_rmse") return r.counterfactual_rmse;
  if (name == "b_error") return r.b_error;
  if (name == "lambda") return r.lambda;
  if (name == "bound_fixed") return r.bound_fixed;
  if (name == "bound_martingale") return r.bound_martingale;
  if (name == "crlb_var") return r.crlb_var;
  if (name == "cert_margin") return r.cert_margin;
  throw ConfigError("unknown metric '" + name + "'");
}

/// Scalar cells are grouped by (system, epsilon, N); dither cells by
/// (system, epsilon, budget) since N varies with diverged segments.
struct GroupKey {
  std::string experiment;
  std::string system;
  double epsilon = 0.0;
  long N = -1;
  double budget = kNotAvailable;

  auto tie() const { return std::make_tuple(experiment, system, std::isnan(budget) ? -1.0 : budget, N, epsilon); }
  bool operator<(const GroupKey& o) const { return tie() < o.tie(); }
};

inline GroupKey group_key(const ExperimentRecord& r) {
  GroupKey k{r.experiment, r.system, r.epsilon, -1, r.budget};
  if (std::isnan(r.budget)) k.N = r.N;
  return k;
}

struct SummaryRow {
  Statistic statistic = Statistic::median;
  GroupKey key;
  std::size_t count = 0;
  std::vector<double> values;  // aligned with metric_names()
};

/// Records with a non-"ok" status are ignored. Rows are ordered by statistic,
/// then group key.
inline std::vector<SummaryRow> aggregate(const std::vector<ExperimentRecord>& records,
                                         const std::vector<Statistic>& stats = {Statistic::median, Statistic::mean}) {
  std::map<GroupKey, std::vector<const ExperimentRecord*>> groups;
  for (const auto& r : records) {
    if (r.status == "ok") groups[group_key(r)].push_back(&r);
  }
  std::vector<SummaryRow> out;
  for (Statistic s : stats) {
    for (const auto& [key, rows] : groups) {
      SummaryRow row{s, key, rows.size(), {}};
      for (const auto& name : metric_names()) {
        std::vector<double> v;
        for (const auto* r : rows) v.push_back(metric(*r, name));
        row.values.push_back(reduce(std::move(v), s));
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "statistic,experiment,system,N,budget,epsilon,count";
  for (const auto& name : metric_names()) os << ',' << name;
  os << '\n';
  for (const auto& r : rows) {
    os << to_string(r.statistic) << ',' << r.key.experiment << ',' << r.key.system << ','
       << (r.key.N < 0 ? std::string("n/a") : std::to_string(r.key.N)) << ',' << csv_number(r.key.budget) << ','
       << csv_number(r.key.epsilon) << ',' << r.count;
    for (double v : r.values) os << ',' << csv_number(v);
    os << '\n';
  }
}

// --- slopes --------------------------------------------------------------------

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  int points_used = 0;
  int points_excluded = 0;
};

/// OLS of log y on log x. Points with a non-positive or non-finite coordinate
/// are excluded and counted.
inline SlopeFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points) {
  std::vector<double> lx, ly;
  SlopeFit fit;
  for (const auto& [x, y] : points) {
    if (x > 0.0 && y > 0.0 && std::isfinite(x) && std::isfinite(y)) {
      lx.push_back(std::log(x));
      ly.push_back(std::log(y));
    } else {
      ++fit.points_excluded;
    }
  }
  if (lx.size() < 2) throw DegenerateDataError("log-log slope needs at least 2 positive points");
  const auto n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw DegenerateDataError("log-log slope needs at least 2 distinct x values");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  fit.points_used = static_cast<int>(lx.size());
  return fit;
}

struct NamedSlope {
  std::string name;
  SlopeFit fit;
};

/// cint_vs_eps: median raw c_int against epsilon at the largest N.
/// berr_vs_epssqrtN: median b_error against epsilon sqrt(N) over every (epsilon, N).
inline std::vector<NamedSlope> scalar_slopes(const std::vector<ExperimentRecord>& records) {
  std::vector<SummaryRow> med;
  for (auto& row : aggregate(records, {Statistic::median})) {
    if (row.key.experiment == "scalar") med.push_back(std::move(row));
  }
  if (med.empty()) throw DegenerateDataError("no scalar sweep records");
  const auto col = [](const std::string& name) {
    const auto& names = metric_names();
    return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
  };
  long n_max = 0;
  for (const auto& r : med) n_max = std::max(n_max, r.key.N);
  std::vector<std::pair<double, double>> cint_pts, berr_pts;
  for (const auto& r : med) {
    if (r.key.N == n_max) cint_pts.emplace_back(r.key.epsilon, r.values[col("c_int_raw")]);
    berr_pts.emplace_back(r.key.epsilon * std::sqrt(static_cast<double>(r.key.N)), r.values[col("b_error")]);
  }
  return {{"cint_vs_eps", fit_loglog_slope(cint_pts)}, {"berr_vs_epssqrtN", fit_loglog_slope(berr_pts)}};
}

inline void write_slopes_csv(std::ostream& os, const std::vector<NamedSlope>& slopes) {
  os << "name,slope,intercept,r_squared,points_used,points_excluded\n";
  for (const auto& s : slopes) {
    os << s.name << ',' << format_double(s.fit.slope) << ',' << format_double(s.fit.intercept) << ','
       << format_double(s.fit.r_squared) << ',' << s.fit.points_used << ',' << s.fit.points_excluded << '\n';
  }
}

// --- checks --------------------------------------------------------------------

/// Selects records by exact field match; absent fields match everything.
struct RecordFilter {
  std::optional<std::string> experiment;
  std::optional<std::string> system;
  std::optional<double> epsilon;
  std::optional<long> N;
  std::optional<double> budget;

  bool matches(const ExperimentRecord& r) const {
    if (r.status != "ok") return false;
    if (experiment && *experiment != r.experiment) return false;
    if (system && *system != r.system) return false;
    if (epsilon && std::abs(*epsilon - r.epsilon) > 1e-12 * std::max(1.0, std::abs(*epsilon))) return false;
    if (N && *N != r.N) return false;
    if (budget && !(*budget == r.budget)) return false;
    return true;
  }

  static RecordFilter from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"experiment", "system", "epsilon", "N", "budget"}, "check filter");
    RecordFilter f;
    if (j.contains("experiment")) f.experiment = j.at("experiment").get<std::string>();
    if (j.contains("system")) f.system = j.at("system").get<std::string>();
    if (j.contains("epsilon")) f.epsilon = j.at("epsilon").get<double>();
    if (j.contains("N")) f.N = j.at("N").get<long>();
    if (j.contains("budget")) f.budget = j.at("budget").get<double>();
    return f;
  }
};

struct Selection {
  RecordFilter filter;
  std::string metric_key;
  Statistic statistic = Statistic::median;

  static Selection from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"filter", "metric", "statistic"}, "check selection");
    Selection s;
    s.filter = RecordFilter::from_json(j.value("filter", nlohmann::json::object()));
    s.metric_key = j.at("metric").get<std::string>();
    koopcert::metric(ExperimentRecord{}, s.metric_key);
    s.statistic = statistic_from_string(j.value("statistic", std::string("median")));
    return s;
  }

  /// NaN when no record matches.
  double evaluate(const std::vector<ExperimentRecord>& records) const {
    std::vector<double> v;
    for (const auto& r : records) {
      if (filter.matches(r)) v.push_back(koopcert::metric(r, metric_key));
    }
    return reduce(std::move(v), statistic);
  }
};

/// kind "slope": value of a named slope; "value": one selection; "ratio":
/// numerator / denominator selections. Passes when min <= value <= max.
struct Check {
  std::string name;
  std::string kind;
  std::string slope;
  Selection numerator;
  Selection denominator;
  double min = -std::numeric_limits<double>::infinity();
  double max = std::numeric_limits<double>::infinity();

  static Check from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"name", "kind", "slope", "select", "numerator", "denominator", "min", "max"},
                                "check");
    Check c;
    c.name = j.at("name").get<std::string>();
    c.kind = j.at("kind").get<std::string>();
    if (c.kind == "slope") {
      c.slope = j.at("slope").get<std::string>();
    } else if (c.kind == "value") {
      c.numerator = Selection::from_json(j.at("select"));
    } else if (c.kind == "ratio") {
      c.numerator = Selection::from_json(j.at("numerator"));
      c.denominator = Selection::from_json(j.at("denominator"));
    } else {
      throw ConfigError("unknown check kind '" + c.kind + "'");
    }
    if (j.contains("min") && !j.at("min").is_null()) c.min = j.at("min").get<double>();
    if (j.contains("max") && !j.at("max").is_null()) c.max = j.at("max").get<double>();
    return c;
  }
};

struct CheckResult {
  std::string name;
  double value = kNotAvailable;
  double min = 0.0;
  double max = 0.0;
  bool pass = false;
  std::string note;
};

inline std::vector<Check> checks_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"checks"}, "checks file");
  std::vector<Check> out;
  for (const auto& c : j.at("checks")) out.push_back(Check::from_json(c));
  return out;
}

/// Missing data (no matching records or slope) fails the check with a note.
inline std::vector<CheckResult> run_checks(const std::vector<Check>& checks, const std::vector<ExperimentRecord>& records,
                                           const std::vector<NamedSlope>& slopes) {
  std::vector<CheckResult> out;
  for (const auto& c : checks) {
    CheckResult r{c.name, kNotAvailable, c.min, c.max, false, ""};
    if (c.kind == "slope") {
      const auto it = std::find_if(slopes.begin(), slopes.end(), [&](const NamedSlope& s) { return s.name == c.slope; });
      if (it != slopes.end()) r.value = it->fit.slope;
    } else if (c.kind == "value") {
      r.value = c.numerator.evaluate(records);
    } else {
      const double num = c.numerator.evaluate(records);
      const double den = c.denominator.evaluate(records);
      r.value = num / den;
    }
    if (std::isnan(r.value)) {
      r.note = "no data";
    } else {
      r.pass = r.value >= c.min && r.value <= c.max;
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void print_check_results(std::ostream& os, const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    os << (r.pass ? "PASS " : "FAIL ") << r.name << ": value=" << csv_number(r.value) << " range=["
       << format_double(r.min) << ", " << format_double(r.max) << "]";
    if (!r.note.empty()) os << " (" << r.note << ")";
    os << '\n';
  }
}

/// Thresholds for the scalar and nonlinear sweeps at the paper grids.
inline nlohmann::json default_checks_json() {
  using nlohmann::json;
  const auto scalar = [](double eps, const char* metric, const char* stat = "median") {
    return json{{"filter", {{"experiment", "scalar"}, {"epsilon", eps}, {"N", 800}}}, {"metric", metric}, {"statistic", stat}};
  };
  const auto dither = [](const char* sys, double d, const char* metric, const char* stat = "median") {
    return json{{"filter", {{"experiment", "dither"}, {"system", sys}, {"epsilon", d}, {"budget", 80}}},
                {"metric", metric},
                {"statistic", stat}};
  };
  json checks = json::array();
  checks.push_back({{"name", "slope cint_vs_eps"}, {"kind", "slope"}, {"slope", "cint_vs_eps"}, {"min", 1.95}, {"max", 2.05}});
  checks.push_back(
      {{"name", "slope berr_vs_epssqrtN"}, {"kind", "slope"}, {"slope", "berr_vs_epssqrtN"}, {"min", -1.15}, {"max", -0.90}});
  checks.push_back({{"name", "scalar eps=0 c_int"}, {"kind", "value"}, {"select", scalar(0.0, "c_int")}, {"max", 1e-12}});
  checks.push_back({{"name", "scalar eps=0 behavior_rmse"},
                    {"kind", "value"},
                    {"select", scalar(0.0, "behavior_rmse")},
                    {"min", 0.0189},
                    {"max", 0.0209}});
  checks.push_back({{"name", "scalar eps=0 counterfactual_rmse"},
                    {"kind", "value"},
                    {"select", scalar(0.0, "counterfactual_rmse")},
                    {"min", 0.5},
                    {"max", 2.0}});
  checks.push_back(
      {{"name", "scalar eps=0 b_error"}, {"kind", "value"}, {"select", scalar(0.0, "b_error")}, {"min", 0.4}, {"max", 1.2}});
  checks.push_back({{"name", "scalar eps=0.1 b_error"},
                    {"kind", "value"},
                    {"select", scalar(0.1, "b_error")},
                    {"min", 0.0046 / 2},
                    {"max", 0.0046 * 2}});
  checks.push_back({{"name", "scalar eps=1 c_int_raw"},
                    {"kind", "value"},
                    {"select", scalar(1.0, "c_int_raw")},
                    {"min", 0.984 - 0.05},
                    {"max", 0.984 + 0.05}});
  checks.push_back({{"name", "scalar eps=1 b_error"},
                    {"kind", "value"},
                    {"select", scalar(1.0, "b_error")},
                    {"min", 4.58e-4 / 2},
                    {"max", 4.58e-4 * 2}});
  for (const char* sys : {"duffing", "van_der_pol"}) {
    const std::string p = std::string(sys) + " budget=80 ";
    checks.push_back({{"name", p + "dither=0 max c_int"}, {"kind", "value"}, {"select", dither(sys, 0.0, "c_int", "max")}, {"max", 1e-12}});
    checks.push_back({{"name", p + "dither=0 min input_predictability"},
                      {"kind", "value"},
                      {"select", dither(sys, 0.0, "input_predictability", "min")},
                      {"min", 0.999}});
    checks.push_back({{"name", p + "dither=0 counterfactual/behavior"},
                      {"kind", "ratio"},
                      {"numerator", dither(sys, 0.0, "counterfactual_rmse")},
                      {"denominator", dither(sys, 0.0, "behavior_rmse")},
                      {"min", 100.0}});
    checks.push_back({{"name", p + "dither=0.05 min c_int"},
                      {"kind", "value"},
                      {"select", dither(sys, 0.05, "c_int", "min")},
                      {"min", 0.01},
                      {"max", nullptr}});
    checks.push_back({{"name", p + "counterfactual reduction dither 0 -> 0.05"},
                      {"kind", "ratio"},
                      {"numerator", dither(sys, 0.0, "counterfactual_rmse")},
                      {"denominator", dither(sys, 0.05, "counterfactual_rmse")},
                      {"min", 1e3}});
    checks.push_back({{"name", p + "behavior ratio dither 0.05 / 0"},
                      {"kind", "ratio"},
                      {"numerator", dither(sys, 0.05, "behavior_rmse")},
                      {"denominator", dither(sys, 0.0, "behavior_rmse")},
                      {"min", 0.1},
                      {"max", 10.0}});
  }
  return {{"checks", checks}};
}

}  // namespace koopcert
