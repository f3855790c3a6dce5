#pragma once

// Euler-Maruyama paths X_{k+1} = X_k + G(X_k) h + sigma(X_k) dW_k with an
// exit-radius ladder, explosion detection at R_max and left-endpoint
// functionals. Noise is addressed by (seed, path, fine step), so runs at h and
// h/2 over the same fine grid share one Brownian path.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdelab/density.hpp"
#include "sdelab/linalg.hpp"
#include "sdelab/model.hpp"
#include "sdelab/rng.hpp"

namespace sdelab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// u with gradient and Hessian, for the martingale and QV accumulators.
struct TestFunction {
  std::string name;
  std::function<double(std::span<const double>, std::span<double>, std::span<double>)> eval;

  static TestFunction from_expr(const Expr& u) {
    return {u.str(), [u](std::span<const double> x, std::span<double> g, std::span<double> h) {
              return u.hessian(x, g, h);
            }};
  }
  static TestFunction from_bump(const Bump& b) {
    return {b.id(), [b](std::span<const double> x, std::span<double> g, std::span<double> h) {
              return b.value_gradient_hessian(x, g, h);
            }};
  }
};

/// Initial law: fills x0 for a path index.
using InitialSampler = std::function<void(std::uint64_t, std::span<double>)>;

struct SimConfig {
  std::vector<double> x0;
  double h = 1e-3;
  double T = 1.0;
  double R_max = 1e6;
  std::vector<double> ladder;  // empty: 2^k for 2^k < R_max, then R_max
  std::uint64_t seed = 0;
  std::size_t paths = 1000;
  std::size_t first_path = 0;  // path indices first_path .. first_path + paths - 1
  bool taming = false;         // G / (1 + h |G|)
  int threads = 0;             // 0: hardware concurrency
  int noise_substeps = 1;      // dW over one step = sum of this many fine increments
  double generator_weight = 0.5;  // second-order weight in Lu; 1 only for regression guards
  std::size_t trace_stride = 0;   // keep every n-th state; 0: none
  std::optional<double> stop_radius;  // end paths on leaving this ball
  InitialSampler initial;         // overrides x0 when set

  std::vector<double> resolved_ladder() const {
    if (!ladder.empty()) return ladder;
    std::vector<double> r;
    for (double v = 1.0; v < R_max; v *= 2.0) r.push_back(v);
    r.push_back(R_max);
    return r;
  }

  void validate(int dim) const {
    if (!(h > 0.0) || !(T > 0.0) || !(h < T)) throw ConfigError("simulate: need 0 < h < T");
    if (!initial && static_cast<int>(x0.size()) != dim) throw ConfigError("simulate: x0 has the wrong dimension");
    if (noise_substeps < 1) throw ConfigError("simulate: noise_substeps must be >= 1");
    const auto l = resolved_ladder();
    for (std::size_t k = 1; k < l.size(); ++k)
      if (!(l[k] > l[k - 1])) throw ConfigError("simulate: ladder radii must increase strictly");
    if (!(R_max > 0.0)) throw ConfigError("simulate: R_max must be positive");
    const double fine = std::ceil(T / h) * noise_substeps;
    if (fine >= 4294967295.0) throw ConfigError("simulate: too many steps for the noise counter");
  }
};

struct TestAccumulator {
  double martingale = 0.0;  // u(X_t) - u(x0) - int Lu ds
  double qv_realized = 0.0;  // sum of squared increments of the above
  double qv_predicted = 0.0;  // int 2w <A grad u, grad u> ds
};

struct PathSample {
  std::vector<std::size_t> steps;  // trace only
  std::vector<double> times;   // trace only
  std::vector<double> states;  // trace only, stride dim
  std::vector<double> x0;
  std::vector<double> final_state;
  double final_time = 0.0;
  std::vector<double> exit_times;  // per ladder radius; inf if not reached
  double zeta_hat = kInf;
  double int_g = 0.0;   // int |G|
  double int_g2 = 0.0;  // int |G|^2
  std::vector<TestAccumulator> tests;
  std::size_t taming_activations = 0;
  std::size_t faults = 0;
  bool faulted = false;
};

namespace detail {

inline void jitter(const rng::CounterRng& g, std::uint32_t step, std::span<double> x) {
  for (std::size_t i = 0; i < x.size(); i += 2) {
    const auto u = g.uniforms(step, static_cast<std::uint32_t>(i / 2));
    x[i] += 1e-12 * (2.0 * u[0] - 1.0);
    if (i + 1 < x.size()) x[i + 1] += 1e-12 * (2.0 * u[1] - 1.0);
  }
}

}  // namespace detail

/// One path. Coefficient faults trigger one retry from a state jittered by
/// 1e-12; a second fault stops the path with `faulted` set.
inline PathSample simulate_path(const CoefficientModel& m, const SimConfig& cfg, std::uint64_t path,
                                std::span<const TestFunction> tests = {}) {
  const int d = m.dim();
  const int q = m.has_sigma() ? m.noise_dim() : d;
  const auto ladder = cfg.resolved_ladder();
  const rng::CounterRng noise(cfg.seed, rng::Stream::brownian, path);
  const rng::CounterRng jit(cfg.seed, rng::Stream::jitter, path);

  PathSample s;
  std::vector<double> x(d), xn(d), G(d), A(d * d), S(d * q), dW(q), z(q);
  if (cfg.initial)
    cfg.initial(path, x);
  else
    x = cfg.x0;
  s.x0 = x;
  s.exit_times.assign(ladder.size(), kInf);
  s.tests.resize(tests.size());

  const bool fixed_sigma = m.has_sigma() ? m.constant_dispersion() : m.constant_diffusion();
  bool sigma_ready = false;

  struct UState {
    double value = 0.0;
    std::vector<double> grad, hess;
  };
  std::vector<UState> us(tests.size());
  for (auto& u : us) {
    u.grad.assign(d, 0.0);
    u.hess.assign(d * d, 0.0);
  }
  auto eval_tests = [&](std::span<const double> at) {
    for (std::size_t k = 0; k < tests.size(); ++k) us[k].value = tests[k].eval(at, us[k].grad, us[k].hess);
  };

  auto norm = [](std::span<const double> v) {
    double a = 0.0;
    for (double c : v) a += c * c;
    return std::sqrt(a);
  };
  auto mark_exits = [&](double r, double t) {
    for (std::size_t k = 0; k < ladder.size(); ++k)
      if (s.exit_times[k] == kInf && r >= ladder[k]) s.exit_times[k] = t;
  };

  const double r0 = norm(x);
  mark_exits(r0, 0.0);
  if (r0 >= cfg.R_max) s.zeta_hat = 0.0;

  auto trace = [&](std::size_t k, double t) {
    if (cfg.trace_stride && k % cfg.trace_stride == 0) {
      s.steps.push_back(k);
      s.times.push_back(t);
      s.states.insert(s.states.end(), x.begin(), x.end());
    }
  };

  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(cfg.T / cfg.h - 1e-9));
  const double fine_scale = std::sqrt(cfg.h / cfg.noise_substeps);
  double t = 0.0;
  std::size_t k = 0;
  bool tests_ready = false;
  std::vector<double> Lu(tests.size()), gamma(tests.size()), prev(tests.size());
  trace(0, 0.0);

  const bool outside = cfg.stop_radius && r0 >= *cfg.stop_radius;
  for (; k < n_steps && s.zeta_hat == kInf && !outside; ++k) {
    const bool partial = cfg.T - t < cfg.h * (1.0 - 1e-9);
    const double hk = partial ? cfg.T - t : cfg.h;
    // coefficients at the left endpoint
    bool ok = false;
    for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
      try {
        m.drift(x, G);
        if (!tests.empty() || (!m.has_sigma() && (!sigma_ready || !fixed_sigma))) m.diffusion(x, A);
        if (!sigma_ready || !fixed_sigma) {
          if (m.has_sigma())
            m.dispersion(x, S);
          else
            spd_sqrt(A, d, S);
          sigma_ready = true;
        }
        if (!tests_ready && !tests.empty()) {
          eval_tests(x);
          tests_ready = true;
        }
        for (double v : G)
          if (!std::isfinite(v)) throw DomainError("non-finite drift");
        ok = true;
      } catch (const Error&) {
        ++s.faults;
        if (attempt == 0) {
          detail::jitter(jit, static_cast<std::uint32_t>(k), x);
          tests_ready = false;
        }
      }
    }
    if (!ok) {
      s.faulted = true;
      break;
    }

    double gn = norm(G);
    s.int_g += gn * hk;
    s.int_g2 += gn * gn * hk;
    double tame = 1.0;
    if (cfg.taming) {
      tame = 1.0 / (1.0 + hk * gn);
      if (hk * gn > 1e-2) ++s.taming_activations;
    }

    // generator terms at the left endpoint
    for (std::size_t j = 0; j < tests.size(); ++j) {
      double second = 0.0, first = 0.0, ag = 0.0;
      for (int a = 0; a < d; ++a) {
        first += G[a] * us[j].grad[a];
        for (int b = 0; b < d; ++b) {
          second += A[a * d + b] * us[j].hess[a * d + b];
          ag += A[a * d + b] * us[j].grad[a] * us[j].grad[b];
        }
      }
      Lu[j] = cfg.generator_weight * second + first;
      gamma[j] = 2.0 * cfg.generator_weight * ag;
    }

    // Brownian increment from the fine grid
    std::fill(dW.begin(), dW.end(), 0.0);
    std::size_t sub = static_cast<std::size_t>(cfg.noise_substeps);
    if (partial) sub = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(hk / cfg.h * sub)));
    for (std::size_t f = 0; f < sub; ++f) {
      noise.normals(static_cast<std::uint32_t>(k * cfg.noise_substeps + f), z);
      for (int i = 0; i < q; ++i) dW[i] += z[i];
    }
    const double scale = partial ? std::sqrt(hk / sub) : fine_scale;
    for (double& w : dW) w *= scale;

    for (int i = 0; i < d; ++i) {
      double v = x[i] + tame * G[i] * hk;
      for (int j = 0; j < q; ++j) v += S[i * q + j] * dW[j];
      xn[i] = v;
    }
    t = partial ? cfg.T : static_cast<double>(k + 1) * cfg.h;

    double rn = norm(xn);
    if (!std::isfinite(rn)) rn = kInf;
    mark_exits(rn, t);
    if (rn >= cfg.R_max) {
      s.zeta_hat = t;
      x = xn;
      break;
    }
    const bool stop = cfg.stop_radius && rn >= *cfg.stop_radius;

    if (!tests.empty()) {
      for (std::size_t j = 0; j < tests.size(); ++j) prev[j] = us[j].value;
      try {
        eval_tests(xn);
      } catch (const Error&) {
        ++s.faults;
        s.faulted = true;
        x = xn;
        break;
      }
      for (std::size_t j = 0; j < tests.size(); ++j) {
        const double dm = us[j].value - prev[j] - Lu[j] * hk;
        s.tests[j].martingale += dm;
        s.tests[j].qv_realized += dm * dm;
        s.tests[j].qv_predicted += gamma[j] * hk;
      }
    }
    x = xn;
    trace(k + 1, t);
    if (stop) break;
  }
  s.final_state = x;
  s.final_time = (s.zeta_hat < kInf) ? s.zeta_hat : t;
  return s;
}

/// Runs `fn(path_index)` for paths first..first+n-1 on static contiguous
/// chunks; results land in index order.
template <class Fn>
auto parallel_paths(std::size_t first, std::size_t n, int threads, Fn&& fn) {
  using R = decltype(fn(std::uint64_t{}));
  std::vector<R> out(n);
  int nt = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  nt = static_cast<int>(std::min<std::size_t>(nt, std::max<std::size_t>(n, 1)));
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(first + i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(nt);
  const std::size_t chunk = (n + nt - 1) / nt;
  for (int w = 0; w < nt; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) out[i] = fn(first + i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline std::vector<PathSample> simulate_paths(const CoefficientModel& m, const SimConfig& cfg,
                                              std::span<const TestFunction> tests = {}) {
  cfg.validate(m.dim());
  return parallel_paths(cfg.first_path, cfg.paths, cfg.threads,
                        [&](std::uint64_t p) { return simulate_path(m, cfg, p, tests); });
}

/// Initial law drawn from a grid density through its inverse CDF.
inline InitialSampler sample_from(const GridDensity& rho, std::uint64_t seed) {
  auto owned = std::make_shared<GridDensity>(rho);
  auto sampler = std::make_shared<DensitySampler>(*owned);
  const int d = rho.dim();
  return [owned, sampler, seed, d](std::uint64_t path, std::span<double> x) {
    const rng::CounterRng g(seed, rng::Stream::initial, path);
    std::vector<double> u(d + 1);
    for (int i = 0; i <= d; i += 2) {
      const auto w = g.uniforms(0, static_cast<std::uint32_t>(i / 2));
      u[i] = w[0];
      if (i + 1 <= d) u[i + 1] = w[1];
    }
    sampler->sample(u, x);
  };
}

// ---------------------------------------------------------------------------
// Summaries

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Wilson score interval at 95%.
inline Interval wilson(std::size_t successes, std::size_t n, double z = 1.959963984540054) {
  if (n == 0) return {0.0, 1.0};
  const double p = static_cast<double>(successes) / n, z2 = z * z, nn = static_cast<double>(n);
  const double centre = (p + z2 / (2 * nn)) / (1 + z2 / nn);
  const double half = z / (1 + z2 / nn) * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn));
  return {successes == 0 ? 0.0 : std::max(0.0, centre - half), successes == n ? 1.0 : std::min(1.0, centre + half)};
}

struct RunFlags {
  std::size_t paths = 0;
  std::size_t faulted = 0;
  std::size_t faults = 0;
  std::size_t taming_activations = 0;
  bool fault_flag = false;  // more than 0.1% of paths faulted
};

inline RunFlags run_flags(const std::vector<PathSample>& ps) {
  RunFlags f;
  f.paths = ps.size();
  for (const auto& p : ps) {
    f.faulted += p.faulted;
    f.faults += p.faults;
    f.taming_activations += p.taming_activations;
  }
  f.fault_flag = f.paths && static_cast<double>(f.faulted) > 1e-3 * f.paths;
  return f;
}

inline nlohmann::json to_json(const RunFlags& f) {
  return {{"paths", f.paths},
          {"faulted_paths", f.faulted},
          {"coefficient_faults", f.faults},
          {"taming_activations", f.taming_activations},
          {"faulted_fraction_above_0.1pct", f.fault_flag}};
}

struct ExplosionEstimate {
  double t = 0.0;
  std::size_t paths = 0;
  std::size_t exploded = 0;
  double fraction = 0.0;
  Interval ci;
  // h-refinement on the first 10% of paths
  std::size_t refinement_paths = 0;
  double refined_fraction_h = 0.0;
  double refined_fraction_half = 0.0;
  double refinement_discrepancy = 0.0;
  double median_zeta = kInf;  // over exploded paths
  RunFlags flags;
  std::vector<std::string> notes;
};

/// Fraction of paths with zeta_hat <= t and its Wilson interval.
inline ExplosionEstimate explosion_prob(const CoefficientModel& m, SimConfig cfg, double t) {
  if (cfg.paths < 100) throw ConfigError("explosion_prob: needs at least 100 paths");
  cfg.T = std::max(cfg.T, t);
  const auto ps = simulate_paths(m, cfg);
  ExplosionEstimate e;
  e.t = t;
  e.paths = ps.size();
  std::vector<double> zs;
  for (const auto& p : ps)
    if (p.zeta_hat <= t) {
      ++e.exploded;
      zs.push_back(p.zeta_hat);
    }
  e.fraction = static_cast<double>(e.exploded) / e.paths;
  e.ci = wilson(e.exploded, e.paths);
  if (!zs.empty()) {
    std::sort(zs.begin(), zs.end());
    e.median_zeta = zs[zs.size() / 2];
  }
  e.flags = run_flags(ps);

  // coupled h / h/2 rerun on the first 10% of paths
  SimConfig coarse = cfg, fine = cfg;
  coarse.paths = fine.paths = (cfg.paths + 9) / 10;
  coarse.noise_substeps = 2 * cfg.noise_substeps;
  fine.h = cfg.h / 2;
  std::size_t ec = 0, ef = 0;
  for (const auto& p : simulate_paths(m, coarse)) ec += p.zeta_hat <= t;
  for (const auto& p : simulate_paths(m, fine)) ef += p.zeta_hat <= t;
  e.refinement_paths = coarse.paths;
  e.refined_fraction_h = static_cast<double>(ec) / coarse.paths;
  e.refined_fraction_half = static_cast<double>(ef) / coarse.paths;
  e.refinement_discrepancy = std::fabs(e.refined_fraction_h - e.refined_fraction_half);
  e.notes.push_back("empirical, scheme-dependent: zeta_hat is the first step with |X| >= R_max");
  if (cfg.taming) e.notes.push_back("drift taming on: explosion detection is biased towards zero");
  if (e.flags.fault_flag) e.notes.push_back("more than 0.1% of paths faulted");
  return e;
}

inline nlohmann::json to_json(const ExplosionEstimate& e) {
  nlohmann::json j;
  j["t"] = e.t;
  j["paths"] = e.paths;
  j["exploded"] = e.exploded;
  j["estimate"] = e.fraction;
  j["ci95"] = {e.ci.lower, e.ci.upper};
  j["median_zeta_hat"] = e.median_zeta < kInf ? nlohmann::json(e.median_zeta) : nlohmann::json(nullptr);
  j["refinement"] = {{"paths", e.refinement_paths},
                     {"fraction_h", e.refined_fraction_h},
                     {"fraction_h_half", e.refined_fraction_half},
                     {"discrepancy", e.refinement_discrepancy}};
  j["flags"] = to_json(e.flags);
  j["notes"] = e.notes;
  return j;
}

struct ExitStats {
  double radius = 0.0;
  std::size_t paths = 0;
  std::size_t exited = 0;
  double fraction_not_exited = 0.0;
  double mean = 0.0;  // over exited paths
  double se = 0.0;
  double median = 0.0;
  std::vector<std::pair<double, double>> quantiles;  // (level, value)
  RunFlags flags;
  std::vector<std::string> notes;
};

/// Exit time from B_radius: first grid time with |X| >= radius.
inline ExitStats first_exit_stats(const CoefficientModel& m, SimConfig cfg, double radius) {
  auto ladder = cfg.resolved_ladder();
  auto it = std::find(ladder.begin(), ladder.end(), radius);
  if (it == ladder.end()) {
    ladder.push_back(radius);
    std::sort(ladder.begin(), ladder.end());
    cfg.ladder = ladder;
    it = std::find(ladder.begin(), ladder.end(), radius);
  }
  const std::size_t idx = static_cast<std::size_t>(it - ladder.begin());
  cfg.stop_radius = radius;
  const auto ps = simulate_paths(m, cfg);
  ExitStats s;
  s.radius = radius;
  s.paths = ps.size();
  std::vector<double> ts;
  for (const auto& p : ps)
    if (p.exit_times[idx] < kInf) ts.push_back(p.exit_times[idx]);
  s.exited = ts.size();
  s.fraction_not_exited = 1.0 - static_cast<double>(ts.size()) / s.paths;
  if (!ts.empty()) {
    double sum = 0.0;
    for (double v : ts) sum += v;
    s.mean = sum / ts.size();
    double ss = 0.0;
    for (double v : ts) ss += (v - s.mean) * (v - s.mean);
    s.se = ts.size() > 1 ? std::sqrt(ss / (ts.size() - 1) / ts.size()) : 0.0;
    std::vector<double> sorted = ts;
    std::sort(sorted.begin(), sorted.end());
    auto quant = [&](double a) {
      const double pos = a * (sorted.size() - 1);
      const std::size_t lo = static_cast<std::size_t>(pos);
      const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
      return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
    };
    s.median = quant(0.5);
    for (double a : {0.05, 0.25, 0.5, 0.75, 0.95}) s.quantiles.emplace_back(a, quant(a));
  }
  s.flags = run_flags(ps);
  if (s.fraction_not_exited > 0.0) s.notes.push_back("paths not exited by T are excluded from the moments");
  s.notes.push_back("discrete monitoring overestimates exit times by O(sqrt(h))");
  return s;
}

inline nlohmann::json to_json(const ExitStats& s) {
  nlohmann::json q = nlohmann::json::array();
  for (const auto& [a, v] : s.quantiles) q.push_back({{"level", a}, {"value", v}});
  return {{"radius", s.radius},       {"paths", s.paths}, {"exited", s.exited},
          {"fraction_not_exited", s.fraction_not_exited},
          {"mean", s.mean},           {"se", s.se},       {"median", s.median},
          {"quantiles", q},           {"flags", to_json(s.flags)}, {"notes", s.notes}};
}

/// CSV trace: path, k, t, x1..xd.
inline std::string trace_csv(const std::vector<PathSample>& ps, int dim, std::size_t first_path = 0) {
  std::string s = "path,k,t";
  for (int i = 1; i <= dim; ++i) s += ",x" + std::to_string(i);
  s += "\n";
  for (std::size_t p = 0; p < ps.size(); ++p)
    for (std::size_t k = 0; k < ps[p].times.size(); ++k) {
      s += std::to_string(first_path + p) + "," + std::to_string(ps[p].steps[k]) + "," +
           to_chars_string(ps[p].times[k]);
      for (int i = 0; i < dim; ++i) s += "," + to_chars_string(ps[p].states[k * dim + i]);
      s += "\n";
    }
  return s;
}

}  // namespace sdelab
