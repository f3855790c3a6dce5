#pragma once

// Subcommand drivers behind the sdelab executable. Each command reads the
// config, runs one task and writes <out>/<name>.json (plus CSV artifacts);
// `report` bundles every JSON in the output directory.
//
// Exit codes: 0 all verdicts pass or the run completed, 1 a verdict failed,
// 2 usage or configuration error.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdelab/config.hpp"
#include "sdelab/density.hpp"
#include "sdelab/lyapunov.hpp"
#include "sdelab/model.hpp"
#include "sdelab/recurrence.hpp"
#include "sdelab/simulate.hpp"
#include "sdelab/verify.hpp"

namespace sdelab::cli {

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c = {
      "check-ellipticity", "check-integrability", "check-lyapunov", "solve-density", "check-divfree",
      "recurrence",        "simulate",            "verify",         "report"};
  return c;
}

struct Options {
  std::string command;
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::size_t> paths;
  std::optional<double> step;
  std::optional<double> horizon;
  std::optional<std::string> criterion;
  std::optional<double> radius_max;
  std::optional<std::string> test;
};

enum class Outcome { pass, fail, inconclusive, complete };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::pass: return "pass";
    case Outcome::fail: return "fail";
    case Outcome::inconclusive: return "inconclusive";
    default: return "complete";
  }
}

struct Result {
  std::string name;  // output file stem
  nlohmann::json body;
  Outcome outcome = Outcome::complete;
  std::string summary;  // one line for the terminal
};

/// Everything a command needs: parsed config, model and resolved run settings.
struct Context {
  Options opt;
  Config cfg;
  CoefficientModel model;
  std::uint64_t seed = 0;
  std::string seed_source;
  int threads = 1;
  std::filesystem::path out;
};

namespace detail {

inline std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + p.string());
  f << s;
}

inline Outcome from(Verdict v) {
  switch (v) {
    case Verdict::pass: return Outcome::pass;
    case Verdict::fail: return Outcome::fail;
    default: return Outcome::inconclusive;
  }
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Density for tasks that need rho: explicit model rho on the [density] box or
/// a stationary solve.
inline GridDensity density_for(const Context& c, const std::string& source) {
  const int d = c.model.dim();
  const Box box = c.cfg.box("density", "box", "-4 4", d);
  const int cells = static_cast<int>(c.cfg.integer("density", "cells", 161));
  if (source == "explicit") {
    if (!c.model.rho()) throw ConfigError("task needs a rho source: the model has no rho");
    return density_from_expr(*c.model.rho(), box, std::vector<int>(d, cells));
  }
  SolveOptions so;
  so.tolerance = c.cfg.num("density", "tolerance", 1e-8);
  so.allow_fallback = c.cfg.flag("density", "allow_fallback", true);
  return solve_stationary(c.model, box, cells, so);
}

/// `require` makes a model without rho an error unless the section asks for
/// a solved density explicitly.
inline std::string rho_source(const Context& c, const std::string& section, bool require = false) {
  if (require && !c.model.rho() && !c.cfg.has(section, "source"))
    throw ConfigError("[" + section + "] needs a rho source: give [model] rho or set source = \"solved\"");
  const std::string def = c.model.rho() ? "explicit" : "solved";
  const std::string s = c.cfg.str(section, "source", def);
  if (s != "explicit" && s != "solved") throw ConfigError("[" + section + "] source must be explicit or solved");
  if (s == "explicit" && !c.model.rho()) throw ConfigError("[" + section + "] source = explicit needs [model] rho");
  return s;
}

inline SimConfig sim_config(const Context& c, const std::string& section, double def_step, double def_T,
                            std::size_t def_paths) {
  SimConfig s;
  const int d = c.model.dim();
  s.x0 = c.cfg.vec(section, "x0", std::vector<double>(d, 0.0));
  s.h = c.opt.step.value_or(c.cfg.num(section, "step", def_step));
  s.T = c.opt.horizon.value_or(c.cfg.num(section, "horizon", def_T));
  s.paths = c.opt.paths.value_or(static_cast<std::size_t>(c.cfg.integer(section, "paths", def_paths)));
  s.R_max = c.cfg.num(section, "R_max", 1e6);
  if (c.opt.radius_max) s.R_max = *c.opt.radius_max;
  if (c.opt.step) c.cfg.set_resolved(section, "step", s.h);
  if (c.opt.horizon) c.cfg.set_resolved(section, "horizon", s.T);
  if (c.opt.paths) c.cfg.set_resolved(section, "paths", s.paths);
  if (c.opt.radius_max) c.cfg.set_resolved(section, "R_max", s.R_max);
  s.seed = c.seed;
  s.threads = c.threads;
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline Result check_ellipticity_cmd(const Context& c) {
  const auto regions = c.cfg.regions("ellipticity", "regions", "ball 10", c.model.dim());
  const auto reps = check_ellipticity(c.model, regions);
  Result r{"ellipticity", nlohmann::json::array(), Outcome::pass, ""};
  for (const auto& e : reps) {
    r.body.push_back(to_json(e));
    if (!e.pass) r.outcome = Outcome::fail;
  }
  r.summary = "ellipticity: " + std::to_string(reps.size()) + " region(s), min eigenvalue " +
              detail::fmt(reps.back().global_lower_bound.value_or(reps.back().min_eigenvalue));
  return r;
}

inline Result check_integrability_cmd(const Context& c) {
  const auto region = c.cfg.regions("integrability", "region", "ball 1", c.model.dim()).front();
  const std::string which = c.cfg.str("integrability", "which", "both");
  const double p = c.cfg.num("integrability", "p_test", c.model.p());
  std::vector<IntegrandKind> kinds;
  if (which == "drift" || which == "both") kinds.push_back(IntegrandKind::drift);
  if (which == "grad_A" || which == "both") kinds.push_back(IntegrandKind::grad_A);
  if (kinds.empty()) throw ConfigError("[integrability] which must be drift, grad_A or both");
  Result r{"integrability", nlohmann::json::array(), Outcome::pass, "integrability:"};
  for (auto k : kinds) {
    const auto rep = check_integrability(c.model, region, k, p);
    r.body.push_back(to_json(rep));
    if (rep.verdict == IntegrabilityVerdict::diverging) r.outcome = Outcome::fail;
    if (rep.verdict == IntegrabilityVerdict::inconclusive && r.outcome == Outcome::pass)
      r.outcome = Outcome::inconclusive;
    r.summary += std::string(" ") + (k == IntegrandKind::drift ? "drift" : "grad_A") + " " + to_string(rep.verdict);
  }
  return r;
}

inline Result check_lyapunov_cmd(const Context& c) {
  const int d = c.model.dim();
  const std::string name = c.opt.criterion.value_or(c.cfg.str("lyapunov", "criterion", "c2"));
  if (c.opt.criterion) c.cfg.set_resolved("lyapunov", "criterion", name);
  const auto region = c.cfg.regions("lyapunov", "region", "ball 10", d).front();
  CriterionOptions o;
  o.M = c.cfg.maybe_num("lyapunov", "M");
  o.N0 = static_cast<int>(c.cfg.integer("lyapunov", "N0", 0));
  o.epsilon = c.cfg.num("lyapunov", "epsilon", 1e-3);
  o.refinement_check = c.cfg.flag("lyapunov", "refinement", true);
  o.saturation_check = c.cfg.flag("lyapunov", "saturation", true);
  CriterionReport rep;
  if (name == "c2") {
    rep = check_c2(c.model, region, o);
  } else if (name == "c2bis") {
    rep = check_c2bis(c.model, region, o);
  } else if (name == "drift") {
    rep = check_drift_only(c.model, region, false, o);
  } else if (name == "drift-bis") {
    rep = check_drift_only(c.model, region, true, o);
  } else if (name == "dual") {
    if (c.model.rho()) {
      c.cfg.set_resolved("lyapunov", "beta_source", "explicit");
      rep = check_dual(c.model, beta_field(c.model, *c.model.rho()), region, o);
    } else {
      c.cfg.set_resolved("lyapunov", "beta_source", "solved");
      const auto rho = std::make_shared<GridDensity>(detail::density_for(c, "solved"));
      rep = check_dual(c.model, beta_field(c.model, *rho), region, o);
    }
  } else if (name == "generalV") {
    const Expr V = Expr::parse(c.cfg.require("lyapunov", "V"), d);
    rep = check_general_V(c.model, V, region, o);
  } else {
    throw ConfigError("unknown criterion '" + name + "' (c2, c2bis, drift, drift-bis, dual, generalV)");
  }
  Result r{"lyapunov_" + name, to_json(rep), Outcome::pass, ""};
  if ((o.M && !rep.satisfied_for_M) || rep.non_saturating) r.outcome = Outcome::fail;
  r.summary = std::string("lyapunov ") + to_string(rep.criterion) + ": minimal M " + detail::fmt(rep.minimal_M) +
              (rep.non_saturating ? " (non-saturating)" : "");
  return r;
}

inline Result solve_density_cmd(const Context& c) {
  const GridDensity rho = detail::density_for(c, "solved");
  write_density(rho, (c.out / "density.json").string(), (c.out / "density.csv").string());
  const auto dec = decompose(c.model, rho);
  nlohmann::json body = header_json(rho);
  body["residual"] = rho.residual;
  body["residual_history"] = rho.residual_history;
  body["scheme"] = rho.scheme;
  body["mass"] = rho.mass();
  body["max_norm_B"] = dec.max_norm_b();
  body["max_norm_G"] = dec.max_norm_drift();
  body["artifacts"] = {"density.json", "density.csv"};
  if (c.model.rho()) {
    // comparison with the model's explicit rho, normalized on the same box
    const auto ex = density_from_expr(*c.model.rho(), rho.grid.box(), rho.grid.shape());
    double worst = 0.0;
    for (std::size_t k = 0; k < ex.values.size(); ++k)
      worst = std::max(worst, std::fabs(rho.values[k] - ex.values[k]) / ex.values[k]);
    body["max_relative_error_vs_model_rho"] = worst;
  }
  return {"solve_density", body, Outcome::complete,
          "solve-density: residual " + detail::fmt(rho.residual) + ", scheme " + rho.scheme};
}

inline Result check_divfree_cmd(const Context& c) {
  const std::string src = detail::rho_source(c, "divfree");
  const GridDensity rho = detail::density_for(c, src);
  const auto dec = src == "explicit" ? decompose(c.model, *c.model.rho(), rho.grid) : decompose(c.model, rho);
  const int per_axis = static_cast<int>(c.cfg.integer("divfree", "per_axis", 3));
  const auto fr = c.cfg.vec("divfree", "fractions", {0.15, 0.25});
  const auto res = divfree_residual(dec, rho, bump_battery(rho.grid.box(), per_axis, fr));
  nlohmann::json body = to_json(dec);
  nlohmann::json list = nlohmann::json::array();
  for (const auto& t : res) list.push_back({{"test", t.test_id}, {"raw", t.raw}, {"normalized", t.normalized}});
  body["residuals"] = list;
  const double worst = max_normalized(res);
  body["max_normalized_residual"] = worst;
  body["tolerance"] = 1e-3;
  // decomposition on the grid: x, beta, B
  std::string csv;
  const int d = c.model.dim();
  for (int i = 1; i <= d; ++i) csv += "x" + std::to_string(i) + ",";
  for (int i = 1; i <= d; ++i) csv += "beta" + std::to_string(i) + ",";
  for (int i = 1; i <= d; ++i) csv += "B" + std::to_string(i) + (i == d ? "\n" : ",");
  std::vector<double> x(d);
  for (std::size_t k = 0; k < dec.grid.size(); ++k) {
    dec.grid.center(k, x);
    for (int i = 0; i < d; ++i) csv += to_chars_string(x[i]) + ",";
    for (int i = 0; i < d; ++i) csv += to_chars_string(dec.beta[k * d + i]) + ",";
    for (int i = 0; i < d; ++i) csv += to_chars_string(dec.b[k * d + i]) + (i + 1 == d ? "\n" : ",");
  }
  detail::write_text(c.out / "decomposition.csv", csv);
  body["artifacts"] = {"decomposition.csv"};
  return {"divfree", body, worst <= 1e-3 ? Outcome::pass : Outcome::fail,
          "check-divfree: max normalized residual " + detail::fmt(worst)};
}

inline Result recurrence_cmd(const Context& c) {
  const std::string src = detail::rho_source(c, "recurrence", true);
  VolumeGrowthOptions vo;
  vo.points_per_decade = static_cast<int>(c.cfg.integer("recurrence", "points_per_decade", 128));
  VolumeGrowthTable t;
  if (src == "explicit") {
    vo.max_radius = c.opt.radius_max.value_or(c.cfg.num("recurrence", "radius_max", 1000.0));
    const Expr rho = *c.model.rho();
    const VectorField beta = beta_field(c.model, rho);
    const CoefficientModel& m = c.model;
    VectorField b = [&m, beta](std::span<const double> x, std::span<double> out) {
      std::array<double, kMaxDim> bt{};
      beta(x, std::span(bt.data(), out.size()));
      m.drift(x, out);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bt[i];
    };
    t = volume_growth(c.model, [&rho](std::span<const double> x) { return rho.eval(x); }, b, vo);
  } else {
    const GridDensity rho = detail::density_for(c, "solved");
    const auto dec = decompose(c.model, rho);
    double half = kInf;
    for (int k = 0; k < rho.dim(); ++k) half = std::min({half, -rho.grid.box().lower[k], rho.grid.box().upper[k]});
    vo.max_radius = c.opt.radius_max.value_or(c.cfg.num("recurrence", "radius_max", half));
    t = volume_growth(c.model, rho, &dec, vo);
  }
  c.cfg.set_resolved("recurrence", "radius_max", vo.max_radius);
  const auto raw = recurrence_criterion(t);
  const double mass = t.mass.back();
  const auto normalized = rescaled(t, 1.0 / mass);
  const auto norm_rep = recurrence_criterion(normalized);
  detail::write_text(c.out / "recurrence.csv", to_csv(t));
  detail::write_text(c.out / "recurrence_normalized.csv", to_csv(normalized));
  nlohmann::json body = {{"source", src},
                         {"raw", to_json(raw)},
                         {"mass_normalized", to_json(norm_rep)},
                         {"mass_of_largest_ball", mass},
                         {"artifacts", {"recurrence.csv", "recurrence_normalized.csv"}}};
  Outcome o = Outcome::inconclusive;
  if (raw.verdict == RecurrenceVerdict::satisfied) o = Outcome::pass;
  if (raw.verdict == RecurrenceVerdict::not_satisfied) o = Outcome::fail;
  return {"recurrence", body, o, std::string("recurrence: ") + to_string(raw.verdict) + ", a_N " + detail::fmt(raw.a_N)};
}

inline Result simulate_cmd(const Context& c) {
  SimConfig s = detail::sim_config(c, "simulate", 1e-3, 1.0, 1000);
  s.taming = c.cfg.flag("simulate", "taming", false);
  s.trace_stride = static_cast<std::size_t>(c.cfg.integer("simulate", "trace_stride", 0));
  const auto exit_radius = c.cfg.maybe_num("simulate", "exit_radius");
  nlohmann::json body;
  const auto e = explosion_prob(c.model, s, s.T);
  body["explosion"] = to_json(e);
  // moments of X_T over surviving paths
  SimConfig plain = s;
  const auto ps = simulate_paths(c.model, plain);
  double m2 = 0.0;
  std::size_t n = 0;
  std::vector<double> mean(c.model.dim(), 0.0);
  for (const auto& p : ps) {
    if (p.zeta_hat < kInf || p.faulted) continue;
    ++n;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] += p.final_state[i];
      m2 += p.final_state[i] * p.final_state[i];
    }
  }
  if (n)
    for (double& v : mean) v /= n;
  body["surviving_paths"] = n;
  body["mean_X_T"] = mean;
  body["mean_sq_norm_X_T"] = n ? m2 / n : 0.0;
  if (exit_radius) body["exit"] = to_json(first_exit_stats(c.model, s, *exit_radius));
  if (s.trace_stride) {
    detail::write_text(c.out / "trace.csv", trace_csv(ps, c.model.dim()));
    body["artifacts"] = {"trace.csv"};
  }
  body["notes"] = {"empirical, scheme-dependent"};
  return {"simulate", body, Outcome::complete,
          "simulate: explosion fraction " + detail::fmt(e.fraction) + " [" + detail::fmt(e.ci.lower) + ", " +
              detail::fmt(e.ci.upper) + "] at t = " + detail::fmt(s.T)};
}

inline Result verify_cmd(const Context& c) {
  const int d = c.model.dim();
  const std::string test = c.opt.test.value_or(c.cfg.str("verify", "test", "martingale"));
  if (c.opt.test) c.cfg.set_resolved("verify", "test", test);
  SimConfig s = detail::sim_config(c, "verify", 1e-3, 1.0, 1000);
  s.generator_weight = c.cfg.num("verify", "generator_weight", 0.5);

  auto test_functions = [&] {
    std::vector<TestFunction> us;
    if (const auto u = c.cfg.raw("verify", "u")) {
      c.cfg.set_resolved("verify", "u", *u);
      for (const auto& e : sdelab::detail::split_top(*u, ';')) us.push_back(TestFunction::from_expr(Expr::parse(e, d)));
    } else {
      us = bump_test_battery(s.x0, static_cast<int>(c.cfg.integer("verify", "battery", 20)));
    }
    return us;
  };
  // battery verdict: at least 90% of the individual tests pass
  auto battery = [&](const std::vector<McSummary>& v, const std::string& label) {
    nlohmann::json list = nlohmann::json::array();
    std::size_t passed = 0;
    for (const auto& x : v) {
      list.push_back(to_json(x));
      passed += x.verdict == Verdict::pass;
    }
    const std::size_t need = (9 * v.size() + 9) / 10;
    nlohmann::json body = {{"tests", list}, {"passed", passed}, {"total", v.size()}, {"required", need}};
    return Result{"verify_" + label, body, passed >= need ? Outcome::pass : Outcome::fail,
                  label + ": " + std::to_string(passed) + "/" + std::to_string(v.size()) + " pass"};
  };

  if (test == "martingale") return battery(martingale_residuals(c.model, test_functions(), s), "martingale");
  if (test == "qv") {
    auto r = battery(qv_residuals(c.model, test_functions(), s), "qv");
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& t : r.body["tests"])
      if (t["details"]["mean_predicted"].get<double>() > 0.0) {
        sum += std::fabs(t["estimate"].get<double>());
        ++n;
      }
    r.body["mean_relative_error"] = n ? sum / n : 0.0;
    return r;
  }
  auto single = [&](const McSummary& m) {
    return Result{"verify_" + test, to_json(m), detail::from(m.verdict),
                  test + ": " + sdelab::to_string(m.verdict) + " (estimate " + detail::fmt(m.estimate) + ")"};
  };
  if (test == "driftfunc") return single(drift_functional_check(c.model, s, static_cast<int>(c.cfg.integer("verify", "r", 2))));
  if (test == "invariance") {
    const GridDensity rho = detail::density_for(c, detail::rho_source(c, "verify", true));
    InvarianceOptions io;
    io.subsample = static_cast<std::size_t>(c.cfg.integer("verify", "subsample", 1500));
    io.reference = static_cast<std::size_t>(c.cfg.integer("verify", "reference", 1500));
    io.permutations = static_cast<std::size_t>(c.cfg.integer("verify", "permutations", 299));
    const std::string start = c.cfg.str("verify", "start", "rho");
    if (start != "rho") io.start_point = sdelab::detail::to_doubles(start, "[verify] start");
    return single(invariance_test(c.model, rho, s, io));
  }
  if (test == "strongconsistency") {
    StrongConsistencyOptions so;
    so.levels = static_cast<int>(c.cfg.integer("verify", "levels", 3));
    return single(strong_consistency(c.model, s, so));
  }
  throw ConfigError("unknown verify test '" + test + "' (martingale, qv, driftfunc, invariance, strongconsistency)");
}

/// Bundles every other JSON report in the output directory.
inline Result report_cmd(const Context& c) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::exists(c.out))
    for (const auto& e : std::filesystem::directory_iterator(c.out))
      if (e.path().extension() == ".json" && e.path().filename() != "report.json" &&
          e.path().filename() != "density.json")
        files.push_back(e.path());
  std::sort(files.begin(), files.end());
  nlohmann::json reports = nlohmann::json::object();
  nlohmann::json config = nlohmann::json::object();  // union of the resolved configs
  Outcome o = Outcome::pass;
  std::size_t failed = 0;
  for (const auto& f : files) {
    std::ifstream in(f);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("report: cannot read " + f.string());
    }
    if (j.value("verdict", "") == "fail") {
      o = Outcome::fail;
      ++failed;
    }
    if (j.contains("config")) config.merge_patch(j["config"]);
    reports[f.stem().string()] = std::move(j);
  }
  return {"report", {{"resolved_config", config}, {"reports", reports}, {"count", files.size()}, {"failed", failed}}, o,
          "report: " + std::to_string(files.size()) + " report(s), " + std::to_string(failed) + " failed"};
}

// ---------------------------------------------------------------------------

inline Context make_context(const Options& opt) {
  if (opt.config.empty()) throw ConfigError("missing --config");
  if (!std::filesystem::exists(opt.config)) throw ConfigError("config file not found: " + opt.config);
  Context c{opt, Config::load(opt.config), CoefficientModel{}, 0, "", 1, {}};
  c.model = CoefficientModel::build(c.cfg.model());
  const auto seed = resolve_seed(opt.seed, c.cfg);
  c.seed = seed.seed;
  c.seed_source = seed.source;
  c.cfg.set_resolved("run", "seed", c.seed);
  if (opt.threads)
    c.threads = *opt.threads;
  else if (c.cfg.has("run", "threads"))
    c.threads = static_cast<int>(c.cfg.integer("run", "threads", 1));
  else
    c.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  c.out = opt.out.value_or(c.cfg.str("run", "out", "out"));
  if (opt.out) c.cfg.set_resolved("run", "out", *opt.out);
  std::filesystem::create_directories(c.out);
  return c;
}

inline Result dispatch(const Context& c) {
  const std::string& cmd = c.opt.command;
  if (cmd == "check-ellipticity") return check_ellipticity_cmd(c);
  if (cmd == "check-integrability") return check_integrability_cmd(c);
  if (cmd == "check-lyapunov") return check_lyapunov_cmd(c);
  if (cmd == "solve-density") return solve_density_cmd(c);
  if (cmd == "check-divfree") return check_divfree_cmd(c);
  if (cmd == "recurrence") return recurrence_cmd(c);
  if (cmd == "simulate") return simulate_cmd(c);
  if (cmd == "verify") return verify_cmd(c);
  if (cmd == "report") return report_cmd(c);
  throw ConfigError("unknown subcommand '" + cmd + "'");
}

/// Runs one subcommand; returns the process exit code.
inline int run(const Options& opt, std::ostream& out, std::ostream& err) {
  try {
    const Context c = make_context(opt);
    if (c.seed_source == "random") out << "seed = " << c.seed << " (random; pass --seed " << c.seed << " to reproduce)\n";
    Result r = dispatch(c);
    nlohmann::json doc;
    doc["command"] = opt.command;
    doc["config_file"] = std::filesystem::path(opt.config).filename().string();
    doc["config"] = c.cfg.resolved();
    doc["seed"] = c.seed;
    doc["seed_source"] = c.seed_source;
    doc["model_warnings"] = c.model.warnings();
    doc["timestamp"] = detail::timestamp();
    doc["verdict"] = to_string(r.outcome);
    doc["result"] = std::move(r.body);
    detail::write_text(c.out / (r.name + ".json"), doc.dump(2) + "\n");
    for (const auto& w : c.model.warnings()) err << "warning: " << w << "\n";
    out << r.summary << "\n" << "wrote " << (c.out / (r.name + ".json")).string() << "\n";
    return r.outcome == Outcome::fail ? 1 : 0;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    // numerical failure of a task (e.g. positivity) is a failed verdict
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace sdelab::cli
