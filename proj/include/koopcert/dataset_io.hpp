#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "koopcert/dataset.hpp"
#include "koopcert/errors.hpp"

namespace koopcert {

/// Shortest representation that round-trips a double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace csv {

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    std::string_view cell = line.substr(start, pos == std::string_view::npos ? line.npos : pos - start);
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.remove_suffix(1);
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    cells.emplace_back(cell);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline double parse_double(const std::string& s, std::size_t row) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != end) {
    throw ParseError("cannot parse number '" + s + "'", row);
  }
  return v;
}

inline long long parse_int(const std::string& s, std::size_t row) {
  long long v = 0;
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != end) {
    throw ParseError("cannot parse integer '" + s + "'", row);
  }
  return v;
}

}  // namespace csv

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

/// Columns: segment_id, step, x_0..x_{n-1}, u_0..u_{m-1}. The terminal state
/// of each segment has empty input cells.
inline void write_dataset_csv(std::ostream& os, const TransitionDataset& data) {
  data.validate();
  os << "segment_id,step";
  for (int i = 0; i < data.n; ++i) os << ",x_" << i;
  for (int j = 0; j < data.m; ++j) os << ",u_" << j;
  os << '\n';
  for (std::size_t s = 0; s < data.segments.size(); ++s) {
    const Segment& seg = data.segments[s];
    for (std::size_t t = 0; t < seg.states.size(); ++t) {
      os << s << ',' << t;
      for (int i = 0; i < data.n; ++i) os << ',' << format_double(seg.states[t](i));
      for (int j = 0; j < data.m; ++j) {
        os << ',';
        if (t < seg.inputs.size()) os << format_double(seg.inputs[t](j));
      }
      os << '\n';
    }
  }
}

inline nlohmann::json dataset_sidecar(const TransitionDataset& data) {
  return {{"n", data.n},
          {"m", data.m},
          {"metadata",
           {{"system", data.metadata.system}, {"seed", data.metadata.seed}, {"policy", data.metadata.policy}}}};
}

inline void save_dataset(const std::filesystem::path& csv_path, const TransitionDataset& data) {
  std::ofstream os(csv_path);
  if (!os) throw ConfigError("cannot open '" + csv_path.string() + "' for writing");
  write_dataset_csv(os, data);
  std::ofstream js(sidecar_path(csv_path));
  js << dataset_sidecar(data).dump(2) << '\n';
}

/// Parses the CSV layout written by write_dataset_csv. n and m come from the
/// header; the sidecar (if given) must agree.
inline TransitionDataset read_dataset_csv(std::istream& is, const nlohmann::json* sidecar = nullptr) {
  std::string line;
  std::size_t row = 1;
  if (!std::getline(is, line)) throw ParseError("empty dataset file", row);
  const auto header = csv::split_line(line);
  if (header.size() < 4 || header[0] != "segment_id" || header[1] != "step") {
    throw ParseError("header must start with segment_id,step", row);
  }
  int n = 0, m = 0;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "x_" + std::to_string(n) && m == 0) {
      ++n;
    } else if (h == "u_" + std::to_string(m)) {
      ++m;
    } else {
      throw ParseError("unexpected column '" + h + "'", row);
    }
  }
  if (n == 0 || m == 0) throw ParseError("header needs at least one x_ and one u_ column", row);

  TransitionDataset data;
  data.n = n;
  data.m = m;
  if (sidecar) {
    if (sidecar->value("n", n) != n || sidecar->value("m", m) != m) {
      throw ConfigError("sidecar dimensions disagree with CSV header");
    }
    if (sidecar->contains("metadata")) {
      const auto& md = sidecar->at("metadata");
      data.metadata.system = md.value("system", "");
      data.metadata.seed = md.value("seed", std::uint64_t{0});
      data.metadata.policy = md.value("policy", "");
    }
  }

  long long current_id = -1;
  bool open_terminal = false;  // last row of the current segment had no input
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = csv::split_line(line);
    if (cells.size() != header.size()) throw ParseError("wrong number of cells", row);
    const long long id = csv::parse_int(cells[0], row);
    const long long step = csv::parse_int(cells[1], row);
    if (id != current_id) {
      if (current_id >= 0 && !open_terminal) throw ParseError("segment ended without a terminal state row", row);
      if (step != 0) throw ParseError("segment must start at step 0", row);
      data.segments.emplace_back();
      current_id = id;
      open_terminal = false;
    } else {
      if (open_terminal) throw ParseError("row after terminal state in the same segment", row);
      if (step != static_cast<long long>(data.segments.back().states.size())) {
        throw ParseError("non-consecutive step index", row);
      }
    }
    Segment& seg = data.segments.back();
    Vector x(n);
    for (int i = 0; i < n; ++i) x(i) = csv::parse_double(cells[2 + static_cast<std::size_t>(i)], row);
    if (!x.allFinite()) throw ParseError("non-finite state entry", row);
    seg.states.push_back(std::move(x));
    bool any_empty = false, all_empty = true;
    for (int j = 0; j < m; ++j) {
      const bool empty = cells[2 + static_cast<std::size_t>(n + j)].empty();
      any_empty |= empty;
      all_empty &= empty;
    }
    if (all_empty) {
      open_terminal = true;
    } else {
      if (any_empty) throw ParseError("partially empty input cells", row);
      Vector u(m);
      for (int j = 0; j < m; ++j) u(j) = csv::parse_double(cells[2 + static_cast<std::size_t>(n + j)], row);
      if (!u.allFinite()) throw ParseError("non-finite input entry", row);
      seg.inputs.push_back(std::move(u));
    }
  }
  if (data.segments.empty()) throw ParseError("dataset has no rows", row);
  if (!open_terminal) throw ParseError("last segment has no terminal state row", row);
  data.validate();
  return data;
}

inline TransitionDataset load_dataset(const std::filesystem::path& csv_path) {
  std::ifstream is(csv_path);
  if (!is) throw ConfigError("cannot open dataset '" + csv_path.string() + "'");
  const auto side = sidecar_path(csv_path);
  if (std::filesystem::exists(side)) {
    std::ifstream js(side);
    const nlohmann::json j = nlohmann::json::parse(js);
    return read_dataset_csv(is, &j);
  }
  return read_dataset_csv(is);
}

}  // namespace koopcert
