#pragma once

// Monte Carlo checks of the martingale problem, the quadratic variation
// identity, drift functionals, invariance of rho and coupled-noise strong
// consistency. Exploded and faulted paths never enter an average.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdelab/simulate.hpp"

namespace sdelab {

enum class Verdict { pass, fail, inconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    default: return "inconclusive";
  }
}

struct McSummary {
  std::string test;
  nlohmann::json params;
  double estimate = 0.0;
  double se = 0.0;
  Interval ci;
  std::size_t n = 0;
  Verdict verdict = Verdict::inconclusive;
  RunFlags flags;
  nlohmann::json details = nlohmann::json::object();
  std::vector<std::string> notes;
};

inline nlohmann::json to_json(const McSummary& s) {
  return {{"test", s.test},
          {"params", s.params},
          {"estimate", s.estimate},
          {"se", s.se},
          {"ci", {s.ci.lower, s.ci.upper}},
          {"n", s.n},
          {"verdict", to_string(s.verdict)},
          {"flags", to_json(s.flags)},
          {"details", s.details},
          {"notes", s.notes}};
}

namespace detail {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  MeanSe r;
  r.n = v.size();
  if (v.empty()) return r;
  double s = 0.0;
  for (double x : v) s += x;
  r.mean = s / v.size();
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(ss / (v.size() - 1) / v.size());
  }
  return r;
}

inline bool usable(const PathSample& p) { return !p.faulted && p.zeta_hat == kInf; }

inline nlohmann::json sim_params(const SimConfig& c) {
  return {{"x0", c.x0},
          {"h", c.h},
          {"T", c.T},
          {"paths", c.paths},
          {"seed", c.seed},
          {"R_max", c.R_max},
          {"taming", c.taming},
          {"generator_weight", c.generator_weight}};
}

inline void survivorship(McSummary& s, const std::vector<PathSample>& ps) {
  std::size_t lost = 0;
  for (const auto& p : ps) lost += !usable(p);
  if (lost)
    s.notes.push_back(std::to_string(lost) + " exploded or faulted paths excluded (statistics condition on survival)");
}

/// |mean| <= 3 SE, with a degenerate case for identically zero samples.
inline Verdict zero_mean_rule(const MeanSe& m) {
  if (m.n < 2) return Verdict::inconclusive;
  if (m.se == 0.0) return std::fabs(m.mean) <= 1e-12 ? Verdict::pass : Verdict::fail;
  return std::fabs(m.mean) <= 3.0 * m.se ? Verdict::pass : Verdict::fail;
}

inline Interval ci95(double est, double se) { return {est - 1.959963984540054 * se, est + 1.959963984540054 * se}; }

}  // namespace detail

/// Martingale residuals M^u_T = u(X_T) - u(x0) - int_0^T Lu(X_s) ds for each
/// test function, from one set of paths. Pass if |mean| <= 3 SE. Each test
/// is rerun at h/2 on the first 10% of paths (coupled noise) to expose the
/// O(h) bias trend.
inline std::vector<McSummary> martingale_residuals(const CoefficientModel& m, std::span<const TestFunction> us,
                                                   const SimConfig& cfg) {
  const auto ps = simulate_paths(m, cfg, us);
  SimConfig coarse = cfg, fine = cfg;
  coarse.paths = fine.paths = std::max<std::size_t>(2, (cfg.paths + 9) / 10);
  coarse.noise_substeps = 2 * cfg.noise_substeps;
  fine.h = cfg.h / 2;
  const auto pc = simulate_paths(m, coarse, us);
  const auto pf = simulate_paths(m, fine, us);
  const RunFlags flags = run_flags(ps);

  std::vector<McSummary> out;
  for (std::size_t j = 0; j < us.size(); ++j) {
    auto collect = [j](const std::vector<PathSample>& v) {
      std::vector<double> r;
      for (const auto& p : v)
        if (detail::usable(p)) r.push_back(p.tests[j].martingale);
      return detail::mean_se(r);
    };
    const auto main = collect(ps), mc = collect(pc), mf = collect(pf);
    McSummary s;
    s.test = "martingale";
    s.params = detail::sim_params(cfg);
    s.params["u"] = us[j].name;
    s.estimate = main.mean;
    s.se = main.se;
    s.ci = detail::ci95(main.mean, main.se);
    s.n = main.n;
    s.verdict = detail::zero_mean_rule(main);
    s.flags = flags;
    s.details["refinement"] = {{"paths", coarse.paths}, {"mean_h", mc.mean}, {"mean_h_half", mf.mean},
                               {"se_h", mc.se}, {"se_h_half", mf.se}};
    s.notes.push_back("fixed h carries an O(h) bias; see refinement");
    detail::survivorship(s, ps);
    out.push_back(std::move(s));
  }
  return out;
}

/// Test-function battery around x0: `count - 4` unit-width bumps centred on
/// Halton points of x0 + [-0.9, 0.9]^d plus four bumps centred at x0 with
/// widths 0.5, 1, 1.5, 2.
inline std::vector<TestFunction> bump_test_battery(const std::vector<double>& x0, int count = 20) {
  const int d = static_cast<int>(x0.size());
  std::vector<TestFunction> out;
  const int lattice = std::max(0, count - 4);
  for (int k = 0; k < lattice; ++k) {
    Bump b{x0, 1.0};
    for (int i = 0; i < d; ++i) b.center[i] += -0.9 + 1.8 * radical_inverse(k + 1, nth_prime(i));
    out.push_back(TestFunction::from_bump(b));
  }
  for (double w : {0.5, 1.0, 1.5, 2.0})
    if (static_cast<int>(out.size()) < count) out.push_back(TestFunction::from_bump(Bump{x0, w}));
  return out;
}

inline McSummary martingale_residual(const CoefficientModel& m, const TestFunction& u, const SimConfig& cfg) {
  return martingale_residuals(m, std::span(&u, 1), cfg).front();
}

/// Realized quadratic variation sum (dM^u)^2 against int 2w <A grad u, grad u> ds.
/// Estimate = mean(realized - predicted) / mean(predicted); pass if
/// |mean diff| <= 0.05 mean(predicted) + 3 SE(diff).
inline std::vector<McSummary> qv_residuals(const CoefficientModel& m, std::span<const TestFunction> us,
                                           const SimConfig& cfg) {
  const auto ps = simulate_paths(m, cfg, us);
  const RunFlags flags = run_flags(ps);
  std::vector<McSummary> out;
  for (std::size_t j = 0; j < us.size(); ++j) {
    std::vector<double> diff;
    double pred = 0.0;
    for (const auto& p : ps)
      if (detail::usable(p)) {
        diff.push_back(p.tests[j].qv_realized - p.tests[j].qv_predicted);
        pred += p.tests[j].qv_predicted;
      }
    const auto d = detail::mean_se(diff);
    const double mp = d.n ? pred / d.n : 0.0;
    McSummary s;
    s.test = "qv";
    s.params = detail::sim_params(cfg);
    s.params["u"] = us[j].name;
    s.n = d.n;
    s.flags = flags;
    s.details = {{"mean_difference", d.mean}, {"se_difference", d.se}, {"mean_predicted", mp}};
    if (d.n < 2) {
      s.verdict = Verdict::inconclusive;
    } else if (mp == 0.0) {
      s.estimate = 0.0;
      s.verdict = std::fabs(d.mean) <= 1e-12 ? Verdict::pass : Verdict::fail;
      s.notes.push_back("predicted quadratic variation is zero");
    } else {
      s.estimate = d.mean / mp;
      s.se = d.se / mp;
      s.verdict = std::fabs(d.mean) <= 0.05 * mp + 3.0 * d.se ? Verdict::pass : Verdict::fail;
    }
    s.ci = detail::ci95(s.estimate, s.se);
    detail::survivorship(s, ps);
    out.push_back(std::move(s));
  }
  return out;
}

inline McSummary qv_residual(const CoefficientModel& m, const TestFunction& u, const SimConfig& cfg) {
  return qv_residuals(m, std::span(&u, 1), cfg).front();
}

namespace detail {

inline double quantile(std::vector<double> v, double a) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = a * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos), hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace detail

/// int_0^T |G(X_s)|^r ds over surviving paths at h and at h/2 (coupled).
/// Pass if the 99.9% quantile is finite at both steps and changes by at most
/// 10% under refinement.
inline McSummary drift_functional_check(const CoefficientModel& m, const SimConfig& cfg, int r_exp) {
  if (r_exp != 1 && r_exp != 2) throw ConfigError("drift functional: exponent must be 1 or 2");
  SimConfig coarse = cfg, fine = cfg;
  coarse.noise_substeps = 2 * cfg.noise_substeps;
  fine.h = cfg.h / 2;
  const auto pc = simulate_paths(m, coarse);
  const auto pf = simulate_paths(m, fine);
  auto values = [r_exp](const std::vector<PathSample>& ps) {
    std::vector<double> v;
    for (const auto& p : ps)
      if (detail::usable(p)) v.push_back(r_exp == 1 ? p.int_g : p.int_g2);
    return v;
  };
  const auto vc = values(pc), vf = values(pf);
  McSummary s;
  s.test = "driftfunc";
  s.params = detail::sim_params(cfg);
  s.params["r"] = r_exp;
  s.flags = run_flags(pc);
  s.n = vc.size();
  const auto mc = detail::mean_se(vc);
  s.estimate = detail::quantile(vc, 0.999);
  const double qf = detail::quantile(vf, 0.999);
  s.se = mc.se;
  s.ci = {std::min(s.estimate, qf), std::max(s.estimate, qf)};
  s.details = {{"quantile_999_h", s.estimate}, {"quantile_999_h_half", qf}, {"mean_h", mc.mean},
               {"mean_h_half", detail::mean_se(vf).mean}, {"surviving_h", vc.size()}, {"surviving_h_half", vf.size()}};
  if (vc.size() < 10 || vf.size() < 10) {
    s.verdict = Verdict::inconclusive;
    s.notes.push_back("too few surviving paths");
  } else {
    const bool finite = std::isfinite(s.estimate) && std::isfinite(qf);
    const double change = std::fabs(s.estimate - qf) / std::max(qf, 1e-300);
    s.details["relative_change"] = change;
    s.verdict = finite && change <= 0.1 ? Verdict::pass : Verdict::fail;
  }
  detail::survivorship(s, pc);
  if (vc.size() < pc.size()) s.notes.push_back("survivorship: reported over paths not exploded before T only");
  return s;
}

// ---------------------------------------------------------------------------
// Invariance

namespace detail {

/// Energy distance between the first n1 and the remaining points of `labels`
/// over a precomputed distance matrix.
inline double energy_statistic(const std::vector<float>& D, std::size_t n, const std::vector<unsigned char>& in_x,
                               std::size_t n1) {
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = D.data() + i * n;
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < n; ++j) (in_x[j] ? a : b) += row[j];
    if (in_x[i]) {
      sxx += a;
      sxy += b;
    } else {
      syy += b;
    }
  }
  const double n2 = static_cast<double>(n - n1), m1 = static_cast<double>(n1);
  return 2.0 * sxy / (m1 * n2) - sxx / (m1 * m1) - syy / (n2 * n2);
}

}  // namespace detail

struct InvarianceOptions {
  std::size_t subsample = 1500;   // simulated points entering the statistic
  std::size_t reference = 1500;   // independent draws from rho
  std::size_t permutations = 299;
  std::optional<std::vector<double>> start_point;  // default: X_0 ~ rho
};

/// X_0 ~ rho (or a point mass), evolved to cfg.T; energy distance between
/// X_T and fresh draws from rho with a permutation p-value. Pass if p >= 0.01.
inline McSummary invariance_test(const CoefficientModel& m, const GridDensity& rho, SimConfig cfg,
                                 const InvarianceOptions& opt = {}) {
  const int d = m.dim();
  if (rho.dim() != d) throw ConfigError("invariance: density dimension does not match the model");
  // the smallest attainable p-value is 1/(permutations+1)
  if (opt.permutations < 100) throw ConfigError("invariance: at least 100 permutations are needed to reach p < 0.01");
  if (opt.start_point) {
    cfg.x0 = *opt.start_point;
    cfg.initial = nullptr;
  } else {
    cfg.initial = sample_from(rho, cfg.seed);
  }
  const auto ps = simulate_paths(m, cfg);

  std::vector<double> pts;
  std::size_t used = 0, outside = 0, usable = 0;
  for (const auto& p : ps) {
    if (!detail::usable(p)) continue;
    ++usable;
    outside += !rho.grid.contains(p.final_state);
  }
  // evenly spaced subsample in path order
  const std::size_t n1 = std::min(opt.subsample, usable);
  for (std::size_t i = 0, seen = 0; i < ps.size() && used < n1; ++i) {
    if (!detail::usable(ps[i])) continue;
    if (seen * n1 / usable == used) {
      pts.insert(pts.end(), ps[i].final_state.begin(), ps[i].final_state.end());
      ++used;
    }
    ++seen;
  }
  const auto ref_sampler = sample_from(rho, cfg.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<double> y(d);
  for (std::size_t k = 0; k < opt.reference; ++k) {
    ref_sampler((std::uint64_t{1} << 40) + k, y);
    pts.insert(pts.end(), y.begin(), y.end());
  }
  const std::size_t n = used + opt.reference;

  McSummary s;
  s.test = "invariance";
  s.params = detail::sim_params(cfg);
  s.params["start"] = opt.start_point ? nlohmann::json(*opt.start_point) : nlohmann::json("rho");
  s.params["subsample"] = used;
  s.params["reference"] = opt.reference;
  s.params["permutations"] = opt.permutations;
  s.flags = run_flags(ps);
  s.n = used;
  if (used < 20) {
    s.verdict = Verdict::inconclusive;
    s.notes.push_back("too few usable paths");
    return s;
  }

  std::vector<float> D(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double a = 0.0;
      for (int k = 0; k < d; ++k) {
        const double t = pts[i * d + k] - pts[j * d + k];
        a += t * t;
      }
      D[i * n + j] = D[j * n + i] = static_cast<float>(std::sqrt(a));
    }
  std::vector<unsigned char> lab(n, 0);
  std::fill(lab.begin(), lab.begin() + used, 1);
  const double observed = detail::energy_statistic(D, n, lab, used);

  const rng::CounterRng perm(cfg.seed, rng::Stream::permutation, 0);
  std::size_t exceed = 0;
  std::vector<unsigned char> shuffled = lab;
  for (std::size_t b = 0; b < opt.permutations; ++b) {
    // Fisher-Yates driven by counter uniforms (step b, block i)
    shuffled = lab;
    for (std::size_t i = n - 1; i > 0; --i) {
      const double u = perm.uniforms(static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(i))[0];
      const std::size_t j = std::min(i, static_cast<std::size_t>(u * (i + 1)));
      std::swap(shuffled[i], shuffled[j]);
    }
    exceed += detail::energy_statistic(D, n, shuffled, used) >= observed;
  }
  const double p = (1.0 + exceed) / (1.0 + opt.permutations);
  s.estimate = observed;
  s.se = 0.0;
  s.ci = {observed, observed};
  s.verdict = p >= 0.01 ? Verdict::pass : Verdict::fail;
  s.details = {{"energy_distance", observed},
               {"p_value", p},
               {"fraction_outside_box", static_cast<double>(outside) / std::max<std::size_t>(usable, 1)}};
  s.notes.push_back("energy distance on a subsample of the simulated endpoints");
  if (outside) s.notes.push_back("paths left the density box: invariance is approximate under truncation");
  detail::survivorship(s, ps);
  return s;
}

// ---------------------------------------------------------------------------
// Strong consistency

struct StrongConsistencyOptions {
  int levels = 3;              // differences D_0..D_{levels-1}, ratios levels-1
  double required_ratio = 1.25;
};

/// Runs at h, h/2, ..., h/2^levels on one fine Brownian grid;
/// D_j = E|X_T^{h/2^j} - X_T^{h/2^{j+1}}|. Pass if every D_j / D_{j+1} >= 1.25.
inline McSummary strong_consistency(const CoefficientModel& m, const SimConfig& cfg,
                                    const StrongConsistencyOptions& opt = {}) {
  if (opt.levels < 2) throw ConfigError("strong consistency: needs at least two levels");
  const int L = opt.levels;
  std::vector<std::vector<PathSample>> runs;
  for (int j = 0; j <= L; ++j) {
    SimConfig c = cfg;
    c.h = cfg.h / std::ldexp(1.0, j);
    c.noise_substeps = cfg.noise_substeps << (L - j);
    runs.push_back(simulate_paths(m, c));
  }
  std::vector<double> D(L), Dse(L);
  std::size_t used = 0;
  for (int j = 0; j < L; ++j) {
    std::vector<double> v;
    for (std::size_t i = 0; i < cfg.paths; ++i) {
      const auto& a = runs[j][i];
      const auto& b = runs[j + 1][i];
      if (!detail::usable(a) || !detail::usable(b)) continue;
      double s2 = 0.0;
      for (std::size_t k = 0; k < a.final_state.size(); ++k) {
        const double t = a.final_state[k] - b.final_state[k];
        s2 += t * t;
      }
      v.push_back(std::sqrt(s2));
    }
    const auto ms = detail::mean_se(v);
    D[j] = ms.mean;
    Dse[j] = ms.se;
    used = ms.n;
  }
  std::vector<double> ratios;
  for (int j = 0; j + 1 < L; ++j) ratios.push_back(D[j + 1] > 0.0 ? D[j] / D[j + 1] : kInf);
  McSummary s;
  s.test = "strongconsistency";
  s.params = detail::sim_params(cfg);
  s.params["levels"] = L;
  s.n = used;
  s.flags = run_flags(runs[0]);
  s.estimate = *std::min_element(ratios.begin(), ratios.end());
  s.ci = {s.estimate, s.estimate};
  s.details = {{"differences", D}, {"difference_se", Dse}, {"ratios", ratios},
               {"observed_order", std::log2(std::max(s.estimate, 1e-300))}};
  s.verdict = s.estimate >= opt.required_ratio ? Verdict::pass : Verdict::fail;
  if (used < 2) s.verdict = Verdict::inconclusive;
  s.notes.push_back("numerical shadow of pathwise uniqueness: coupled-noise step refinement");
  detail::survivorship(s, runs[0]);
  return s;
}

}  // namespace sdelab
