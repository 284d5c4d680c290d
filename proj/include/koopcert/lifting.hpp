#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "koopcert/errors.hpp"
#include "koopcert/linalg.hpp"

namespace koopcert {

enum class DictionaryKind { identity, polynomial };

inline std::string_view to_string(DictionaryKind k) {
  return k == DictionaryKind::identity ? "identity" : "polynomial";
}

inline DictionaryKind dictionary_kind_from_string(std::string_view s) {
  if (s == "identity") return DictionaryKind::identity;
  if (s == "polynomial") return DictionaryKind::polynomial;
  throw ConfigError("unknown dictionary kind '" + std::string(s) + "'");
}

using MultiIndex = std::vector<int>;

/// Monomial observable dictionary psi(x).
///
/// Term order: the n identity coordinates, then the constant (if requested),
/// then degrees 2..p, each degree block in descending lexicographic order of
/// the exponent vector (x1^2, x1 x2, x2^2, ...).
struct DictionarySpec {
  DictionaryKind kind = DictionaryKind::identity;
  int state_dim = 1;
  int degree = 1;
  bool include_constant = false;
  std::vector<MultiIndex> terms;

  std::size_t size() const { return terms.size(); }
};

namespace detail {

// All exponent vectors of total degree `deg` over n variables, descending lex.
inline void monomials_of_degree(int n, int deg, std::vector<MultiIndex>& out) {
  MultiIndex cur(static_cast<std::size_t>(n), 0);
  auto rec = [&](auto&& self, int var, int remaining) -> void {
    if (var == n - 1) {
      cur[static_cast<std::size_t>(var)] = remaining;
      out.push_back(cur);
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      cur[static_cast<std::size_t>(var)] = e;
      self(self, var + 1, remaining - e);
    }
  };
  rec(rec, 0, deg);
}

}  // namespace detail

inline DictionarySpec build_dictionary(DictionaryKind kind, int n, int degree = 1,
                                       bool include_constant = false) {
  if (n < 1) throw ConfigError("dictionary state dimension must be >= 1");
  if (degree < 1) throw ConfigError("dictionary degree must be >= 1");
  DictionarySpec d;
  d.kind = kind;
  d.state_dim = n;
  if (kind == DictionaryKind::identity) {
    d.degree = 1;
    d.include_constant = false;
  } else {
    d.degree = degree;
    d.include_constant = include_constant;
  }
  detail::monomials_of_degree(n, 1, d.terms);
  if (d.include_constant) d.terms.emplace_back(static_cast<std::size_t>(n), 0);
  for (int deg = 2; deg <= d.degree; ++deg) detail::monomials_of_degree(n, deg, d.terms);
  return d;
}

inline Vector lift(const Vector& x, const DictionarySpec& dict) {
  if (x.size() != dict.state_dim) {
    throw ConfigError("state has dimension " + std::to_string(x.size()) +
                      " but dictionary expects " + std::to_string(dict.state_dim));
  }
  if (!x.allFinite()) throw NumericInputError("non-finite state entry");
  Vector z(static_cast<Eigen::Index>(dict.size()));
  for (std::size_t i = 0; i < dict.terms.size(); ++i) {
    double v = 1.0;
    const MultiIndex& t = dict.terms[i];
    for (std::size_t j = 0; j < t.size(); ++j) {
      for (int e = 0; e < t[j]; ++e) v *= x(static_cast<Eigen::Index>(j));
    }
    z(static_cast<Eigen::Index>(i)) = v;
  }
  return z;
}

/// Human-readable term names, e.g. "x0^2*x1".
inline std::vector<std::string> term_names(const DictionarySpec& dict) {
  std::vector<std::string> names;
  for (const MultiIndex& t : dict.terms) {
    std::string s;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (t[j] == 0) continue;
      if (!s.empty()) s += '*';
      s += "x" + std::to_string(j);
      if (t[j] > 1) s += "^" + std::to_string(t[j]);
    }
    names.push_back(s.empty() ? "1" : s);
  }
  return names;
}

inline nlohmann::json to_json(const DictionarySpec& d) {
  return {{"kind", std::string(to_string(d.kind))},
          {"n", d.state_dim},
          {"degree", d.degree},
          {"include_constant", d.include_constant}};
}

inline DictionarySpec dictionary_from_json(const nlohmann::json& j) {
  for (const auto& [key, _] : j.items()) {
    if (key != "kind" && key != "n" && key != "degree" && key != "include_constant") {
      throw ConfigError("unknown dictionary key '" + key + "'");
    }
  }
  if (!j.contains("kind") || !j.contains("n")) throw ConfigError("dictionary needs 'kind' and 'n'");
  return build_dictionary(dictionary_kind_from_string(j.at("kind").get<std::string>()),
                          j.at("n").get<int>(), j.value("degree", 1),
                          j.value("include_constant", false));
}

}  // namespace koopcert
