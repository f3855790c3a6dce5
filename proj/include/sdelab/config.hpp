#pragma once

// Run configuration: INI-style sections of `key = value` lines (Boost
// PropertyTree ini parser). Matrices are written row by row with ';' between
// rows and ',' between entries; commas inside function calls are kept.
//
//   [model]
//   dim = 2
//   p = 3
//   A = 1, 0; 0, 1
//   G = -x1; -x2
//
// Every value read is recorded, defaults included, so reports can embed the
// fully resolved configuration.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "sdelab/errors.hpp"
#include "sdelab/model.hpp"
#include "sdelab/region.hpp"

namespace sdelab {

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  s = s.substr(b, e - b + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

/// Splits on `sep` outside parentheses.
inline std::vector<std::string> split_top(const std::string& s, char sep) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == sep && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (trim(s.substr(used)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(what + ": expected a number, got '" + s + "'");
}

inline std::vector<double> to_doubles(const std::string& s, const std::string& what) {
  std::vector<double> v;
  for (const auto& t : split_top(s, ',')) v.push_back(to_double(t, what));
  return v;
}

}  // namespace detail

class Config {
 public:
  static Config load(const std::string& path) {
    Config c;
    c.path_ = path;
    try {
      boost::property_tree::ini_parser::read_ini(path, c.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("config " + path + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    c.check_keys();
    return c;
  }

  static Config parse(const std::string& text, const std::string& name = "<string>") {
    Config c;
    c.path_ = name;
    std::istringstream in(text);
    try {
      boost::property_tree::ini_parser::read_ini(in, c.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("config " + name + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    c.check_keys();
    return c;
  }

  const std::string& path() const { return path_; }
  bool has_section(const std::string& s) const { return tree_.get_child_optional(s).has_value(); }
  bool has(const std::string& s, const std::string& k) const { return raw(s, k).has_value(); }

  std::optional<std::string> raw(const std::string& s, const std::string& k) const {
    const auto sec = tree_.get_child_optional(s);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(k);
    if (!v) return std::nullopt;
    return detail::trim(*v);
  }

  std::string str(const std::string& s, const std::string& k, const std::string& def) const {
    const auto v = raw(s, k).value_or(def);
    record(s, k, v);
    return v;
  }
  std::string require(const std::string& s, const std::string& k) const {
    const auto v = raw(s, k);
    if (!v) throw ConfigError("config: missing [" + s + "] " + k);
    record(s, k, *v);
    return *v;
  }
  double num(const std::string& s, const std::string& k, double def) const {
    const auto v = raw(s, k);
    const double x = v ? detail::to_double(*v, "[" + s + "] " + k) : def;
    record(s, k, x);
    return x;
  }
  std::optional<double> maybe_num(const std::string& s, const std::string& k) const {
    const auto v = raw(s, k);
    if (!v) return std::nullopt;
    const double x = detail::to_double(*v, "[" + s + "] " + k);
    record(s, k, x);
    return x;
  }
  long long integer(const std::string& s, const std::string& k, long long def) const {
    const double x = num(s, k, static_cast<double>(def));
    if (x != std::floor(x)) throw ConfigError("[" + s + "] " + k + ": expected an integer");
    record(s, k, static_cast<long long>(x));
    return static_cast<long long>(x);
  }
  bool flag(const std::string& s, const std::string& k, bool def) const {
    const auto v = raw(s, k);
    bool b = def;
    if (v) {
      if (*v == "true" || *v == "on" || *v == "yes" || *v == "1")
        b = true;
      else if (*v == "false" || *v == "off" || *v == "no" || *v == "0")
        b = false;
      else
        throw ConfigError("[" + s + "] " + k + ": expected true/false, got '" + *v + "'");
    }
    record(s, k, b);
    return b;
  }
  std::vector<double> vec(const std::string& s, const std::string& k, std::vector<double> def) const {
    const auto v = raw(s, k);
    auto x = v ? detail::to_doubles(*v, "[" + s + "] " + k) : std::move(def);
    record(s, k, x);
    return x;
  }

  /// Records a value chosen outside the file (flags, resolved seed).
  void set_resolved(const std::string& s, const std::string& k, nlohmann::json v) const { resolved_[s][k] = std::move(v); }
  const nlohmann::json& resolved() const { return resolved_; }

  ModelSpec model() const {
    if (!has_section("model")) throw ConfigError("config: missing [model] section");
    ModelSpec m;
    m.dim = static_cast<int>(integer("model", "dim", 0));
    m.p = num("model", "p", 0.0);
    if (m.dim < 1) throw ConfigError("[model] dim must be a positive integer");
    m.A = matrix(require("model", "A"), "A");
    m.G = detail::split_top(require("model", "G"), ';');
    if (const auto s = raw("model", "sigma")) {
      m.sigma = matrix(*s, "sigma");
      record("model", "sigma", *s);
    }
    if (const auto r = raw("model", "rho")) {
      m.rho = *r;
      record("model", "rho", *r);
    }
    return m;
  }

  /// "ball R [at c1,c2]", "box lo hi" (scalars or comma lists), "annulus r1 r2",
  /// several separated by ';'.
  std::vector<Region> regions(const std::string& s, const std::string& k, const std::string& def, int dim) const {
    const std::string text = str(s, k, def);
    const int res = static_cast<int>(integer(s, "resolution", 41));
    std::vector<Region> out;
    for (const auto& item : detail::split_top(text, ';')) {
      std::istringstream in(item);
      std::string kind;
      in >> kind;
      std::vector<std::string> args;
      for (std::string a; in >> a;) args.push_back(a);
      const std::string what = "[" + s + "] " + k;
      if (kind == "ball" && (args.size() == 1 || (args.size() == 3 && args[1] == "at"))) {
        const double r = detail::to_double(args[0], what);
        std::vector<double> c = args.size() == 3 ? detail::to_doubles(args[2], what) : std::vector<double>(dim, 0.0);
        out.push_back(Region::ball(std::move(c), r, res));
      } else if (kind == "box" && args.size() == 2) {
        auto lo = detail::to_doubles(args[0], what), hi = detail::to_doubles(args[1], what);
        if (lo.size() == 1) lo.assign(dim, lo[0]);
        if (hi.size() == 1) hi.assign(dim, hi[0]);
        out.push_back(Region::box(std::move(lo), std::move(hi), res));
      } else if (kind == "annulus" && args.size() == 2) {
        out.push_back(Region::annulus(detail::to_double(args[0], what), detail::to_double(args[1], what), res));
      } else {
        throw ConfigError(what + ": cannot read region '" + item + "'");
      }
      validate(out.back(), dim);
    }
    return out;
  }

  Box box(const std::string& s, const std::string& k, const std::string& def, int dim) const {
    std::istringstream in(str(s, k, def));
    std::vector<std::string> toks;
    for (std::string t; in >> t;) toks.push_back(t);
    if (toks.size() != 2) throw ConfigError("[" + s + "] " + k + ": expected 'lower upper'");
    auto lo = detail::to_doubles(toks[0], k), hi = detail::to_doubles(toks[1], k);
    if (lo.size() == 1) lo.assign(dim, lo[0]);
    if (hi.size() == 1) hi.assign(dim, hi[0]);
    if (static_cast<int>(lo.size()) != dim || static_cast<int>(hi.size()) != dim)
      throw ConfigError("[" + s + "] " + k + ": box has the wrong dimension");
    for (int i = 0; i < dim; ++i)
      if (!(lo[i] < hi[i])) throw ConfigError("[" + s + "] " + k + ": empty box");
    return Box{lo, hi};
  }

 private:
  static std::vector<std::vector<std::string>> matrix(const std::string& text, const char* name) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& row : detail::split_top(text, ';')) rows.push_back(detail::split_top(row, ','));
    for (const auto& r : rows)
      for (const auto& e : r)
        if (e.empty()) throw ConfigError(std::string("[model] ") + name + ": empty entry");
    return rows;
  }

  void record(const std::string& s, const std::string& k, nlohmann::json v) const { resolved_[s][k] = std::move(v); }

  void check_keys() const {
    static const std::map<std::string, std::set<std::string>> known = {
        {"model", {"dim", "p", "A", "G", "sigma", "rho"}},
        {"run", {"seed", "out", "threads"}},
        {"ellipticity", {"regions", "resolution"}},
        {"integrability", {"region", "which", "p_test", "resolution"}},
        {"lyapunov", {"criterion", "region", "M", "N0", "epsilon", "V", "resolution", "refinement", "saturation"}},
        {"density", {"box", "cells", "tolerance", "allow_fallback"}},
        {"divfree", {"per_axis", "fractions", "source"}},
        {"recurrence", {"radius_max", "source", "points_per_decade"}},
        {"simulate", {"x0", "step", "horizon", "paths", "R_max", "taming", "trace_stride", "exit_radius"}},
        {"verify",
         {"test", "x0", "step", "horizon", "paths", "u", "battery", "r", "levels", "subsample", "reference",
          "permutations", "generator_weight", "R_max", "start", "source"}},
    };
    for (const auto& [sec, child] : tree_) {
      const auto it = known.find(sec);
      if (it == known.end()) throw ConfigError("config: unknown section [" + sec + "]");
      if (!child.data().empty()) throw ConfigError("config: key '" + sec + "' outside a section");
      for (const auto& [key, val] : child)
        if (!it->second.count(key)) throw ConfigError("config: unknown key '" + key + "' in [" + sec + "]");
    }
  }

  std::string path_;
  boost::property_tree::ptree tree_;
  mutable nlohmann::json resolved_ = nlohmann::json::object();
};

/// Seed priority: explicit flag, then [run] seed, then SDE_LAB_SEED, then a
/// random seed (reported by the caller).
struct SeedChoice {
  std::uint64_t seed = 0;
  std::string source;  // "flag", "config", "env", "random"
};

inline SeedChoice resolve_seed(std::optional<std::uint64_t> flag, const Config& cfg) {
  if (flag) return {*flag, "flag"};
  if (const auto v = cfg.raw("run", "seed")) {
    try {
      return {std::stoull(*v), "config"};
    } catch (const std::exception&) {
      throw ConfigError("[run] seed: expected an unsigned integer");
    }
  }
  if (const char* env = std::getenv("SDE_LAB_SEED")) {
    try {
      return {std::stoull(env), "env"};
    } catch (const std::exception&) {
      throw ConfigError("SDE_LAB_SEED: expected an unsigned integer");
    }
  }
  std::random_device rd;
  return {(std::uint64_t{rd()} << 32) ^ rd(), "random"};
}

}  // namespace sdelab
