#pragma once

// Growth criteria for non-explosion. Every check samples an a.e. inequality
// LHS(x) <= M * RHS(x) on a bounded region and reports the sample supremum
// of LHS/RHS as `minimal_M`, which is a lower bound for the true constant.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdelab/errors.hpp"
#include "sdelab/model.hpp"
#include "sdelab/region.hpp"

namespace sdelab {

enum class Criterion { c2, c2bis, c2_drift, c2bis_drift, dual, general_v };

inline const char* to_string(Criterion c) {
  switch (c) {
    case Criterion::c2: return "C2";
    case Criterion::c2bis: return "C2bis";
    case Criterion::c2_drift: return "C2-drift";
    case Criterion::c2bis_drift: return "C2bis-drift";
    case Criterion::dual: return "dual";
    default: return "generalV";
  }
}

/// x -> field(x) written into out (size d).
using VectorField = std::function<void(std::span<const double>, std::span<double>)>;

struct Violation {
  std::vector<double> x;
  double lhs = 0.0;
  double rhs = 0.0;  // M * RHS/M
};

struct CriterionOptions {
  std::optional<double> M;
  int N0 = 0;                  // C2bis variants
  double epsilon = 1e-3;       // exclusion band above N0
  bool refinement_check = true;
  bool saturation_check = true;
  std::size_t max_violations = 100;
};

struct CriterionReport {
  Criterion criterion = Criterion::c2;
  Region region;
  std::size_t samples = 0;
  std::size_t excluded = 0;  // points inside the N0 + epsilon band
  int N0 = 0;
  double epsilon = 0.0;
  double minimal_M = 0.0;
  double sup_ratio = -std::numeric_limits<double>::infinity();  // signed sup of LHS/RHS
  std::vector<double> worst_point;
  std::optional<double> M;
  bool satisfied_for_M = true;
  std::size_t violation_count = 0;
  std::vector<Violation> violations;
  std::optional<double> refined_minimal_M;
  bool refinement_stable = true;
  std::vector<std::pair<double, double>> saturation;  // (outer radius, minimal_M)
  bool non_saturating = false;
  std::vector<std::string> notes;
};

// ---------------------------------------------------------------------------
// Pointwise pieces

/// -<Ax,x>/(|x|^2+1) + trace(A)/2 + <G,x>.
inline double c2_lhs(std::span<const double> A, std::span<const double> G, std::span<const double> x) {
  const int d = static_cast<int>(x.size());
  double s = 0.0, axx = 0.0, tr = 0.0, gx = 0.0;
  for (int i = 0; i < d; ++i) {
    s += x[i] * x[i];
    tr += A[i * d + i];
    gx += G[i] * x[i];
    for (int j = 0; j < d; ++j) axx += A[i * d + j] * x[i] * x[j];
  }
  return -axx / (s + 1.0) + 0.5 * tr + gx;
}

/// (|x|^2+1)(ln(|x|^2+1)+1).
inline double c2_rhs(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return (s + 1.0) * (std::log1p(s) + 1.0);
}

/// (r/(r-N0) - 1/2 - 3(r-N0)^2 r/(2(r-N0)^3+1)) <Ax,x>/r^2 + trace(A)/2 + <G,x>.
inline double c2bis_lhs(std::span<const double> A, std::span<const double> G, std::span<const double> x,
                        int N0) {
  const int d = static_cast<int>(x.size());
  double s = 0.0, axx = 0.0, tr = 0.0, gx = 0.0;
  for (int i = 0; i < d; ++i) {
    s += x[i] * x[i];
    tr += A[i * d + i];
    gx += G[i] * x[i];
    for (int j = 0; j < d; ++j) axx += A[i * d + j] * x[i] * x[j];
  }
  const double r = std::sqrt(s);
  const double t = r - N0;
  const double pre = r / t - 0.5 - 3.0 * t * t * r / (2.0 * t * t * t + 1.0);
  return pre * axx / s + 0.5 * tr + gx;
}

/// (r-N0 + 1/(r-N0)^2) r (ln((r-N0)^3+1)+1).
inline double c2bis_rhs(std::span<const double> x, int N0) {
  double s = 0.0;
  for (double v : x) s += v * v;
  const double r = std::sqrt(s);
  const double t = r - N0;
  return (t + 1.0 / (t * t)) * r * (std::log1p(t * t * t) + 1.0);
}

inline double inner(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace detail {

// Evaluates the sampled inequality; `point` returns false to exclude x.
template <class PointFn>
void sample_criterion(const Region& region, int dim, const CriterionOptions& opt, CriterionReport& rep,
                      PointFn&& point) {
  const PointSet pts = sample(region, dim);
  rep.samples = pts.size();
  rep.minimal_M = 0.0;
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < pts.size(); ++n) {
    const auto x = pts[n];
    double lhs = 0.0, rhs = 1.0;
    if (!point(x, lhs, rhs)) {
      ++rep.excluded;
      continue;
    }
    const double ratio = lhs / rhs;
    if (ratio > worst) {
      worst = ratio;
      rep.worst_point.assign(x.begin(), x.end());
    }
    if (opt.M && lhs > *opt.M * rhs) {
      ++rep.violation_count;
      if (rep.violations.size() < opt.max_violations)
        rep.violations.push_back({std::vector<double>(x.begin(), x.end()), lhs, *opt.M * rhs});
    }
  }
  rep.sup_ratio = worst;
  rep.minimal_M = std::max(0.0, worst);
  rep.satisfied_for_M = rep.violation_count == 0;
}

template <class Run>
void stability_and_saturation(const Region& region, const CriterionOptions& opt, CriterionReport& rep,
                              Run&& run) {
  if (opt.refinement_check) {
    const double refined = run(region.refined());
    rep.refined_minimal_M = refined;
    const double base = rep.minimal_M;
    rep.refinement_stable = std::fabs(refined - base) <= 0.01 * std::max(std::fabs(base), 1e-300) ||
                            (base == 0.0 && refined == 0.0);
  }
  if (opt.saturation_check) {
    rep.saturation.emplace_back(outer_radius(region), rep.minimal_M);
    bool growing = true;
    double prev = rep.minimal_M;
    for (double f : {10.0, 100.0}) {
      const Region big = scaled(region, f);
      double m;
      try {
        m = run(big);
      } catch (const DomainError&) {
        m = std::numeric_limits<double>::infinity();
      }
      rep.saturation.emplace_back(outer_radius(big), m);
      if (!(m > 1.1 * prev) || prev <= 0.0) growing = false;
      prev = m;
    }
    rep.non_saturating = growing;
    if (growing) rep.notes.push_back("criterion likely violated at infinity");
  }
}

inline void scope_note(const CoefficientModel& m, CriterionReport& rep) {
  if (!m.in_theory_scope()) rep.notes.push_back("d = 1: outside the d >= 2 setting of the criteria");
  rep.notes.push_back("sampled check: no violation found is not a proof of an a.e. inequality");
}

inline double norm_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Criteria

namespace detail {

// Shared driver for the C2 family. `drift` overrides G (for the dual form);
// `drift_only` drops the diffusion terms.
inline CriterionReport c2_family(const CoefficientModel& m, const Region& region, Criterion id,
                                 const CriterionOptions& opt, const VectorField* drift,
                                 bool drift_only, bool bis) {
  const int d = m.dim();
  validate(region, d);
  std::vector<double> A(d * d), G(d);
  auto eval_point = [&](std::span<const double> x, double& lhs, double& rhs) {
    if (drift)
      (*drift)(x, G);
    else
      m.drift(x, G);
    if (bis) {
      const double r = norm_of(x);
      if (r <= opt.N0)
        throw ConfigError("sample point with |x| <= N0 (" + std::to_string(opt.N0) +
                          "); use a region outside B_N0");
      if (r < opt.N0 + opt.epsilon) return false;
      rhs = c2bis_rhs(x, opt.N0);
      if (drift_only) {
        lhs = inner(G, x);
      } else {
        m.diffusion(x, A);
        lhs = c2bis_lhs(A, G, x, opt.N0);
      }
    } else {
      rhs = c2_rhs(x);
      if (drift_only) {
        lhs = inner(G, x);
      } else {
        m.diffusion(x, A);
        lhs = c2_lhs(A, G, x);
      }
    }
    return true;
  };
  auto run = [&](const Region& r) {
    CriterionReport tmp;
    CriterionOptions o = opt;
    o.M.reset();
    sample_criterion(r, d, o, tmp, eval_point);
    return tmp.minimal_M;
  };
  CriterionReport rep;
  rep.criterion = id;
  rep.region = region;
  rep.M = opt.M;
  if (bis) {
    rep.N0 = opt.N0;
    rep.epsilon = opt.epsilon;
    rep.notes.push_back("points with |x| < N0 + epsilon are excluded (prefactor singular at |x| = N0)");
  }
  sample_criterion(region, d, opt, rep, eval_point);
  stability_and_saturation(region, opt, rep, run);
  scope_note(m, rep);
  return rep;
}

}  // namespace detail

inline CriterionReport check_c2(const CoefficientModel& m, const Region& region,
                                const CriterionOptions& opt = {}) {
  return detail::c2_family(m, region, Criterion::c2, opt, nullptr, false, false);
}

inline CriterionReport check_c2bis(const CoefficientModel& m, const Region& region,
                                   const CriterionOptions& opt = {}) {
  if (opt.N0 < 0) throw ConfigError("N0 must be nonnegative");
  if (!(opt.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  return detail::c2_family(m, region, Criterion::c2bis, opt, nullptr, false, true);
}

/// LHS = <G(x), x> only, with the RHS of C2 or C2bis.
inline CriterionReport check_drift_only(const CoefficientModel& m, const Region& region, bool bis,
                                        const CriterionOptions& opt = {}) {
  if (bis && opt.N0 < 0) throw ConfigError("N0 must be nonnegative");
  return detail::c2_family(m, region, bis ? Criterion::c2bis_drift : Criterion::c2_drift, opt,
                           nullptr, true, bis);
}

/// C2 with G replaced by the co-drift 2 beta - G.
inline CriterionReport check_dual(const CoefficientModel& m, const VectorField& beta,
                                  const Region& region, const CriterionOptions& opt = {}) {
  const int d = m.dim();
  VectorField co_drift = [&m, &beta, d](std::span<const double> x, std::span<double> out) {
    std::array<double, kMaxDim> b{}, g{};
    beta(x, std::span(b.data(), d));
    m.drift(x, std::span(g.data(), d));
    for (int i = 0; i < d; ++i) out[i] = 2.0 * b[i] - g[i];
  };
  auto rep = detail::c2_family(m, region, Criterion::dual, opt, &co_drift, false, false);
  rep.notes.push_back("sufficient condition for invariance of m under the co-semigroup");
  return rep;
}

/// sup LV/V and LV <= M V for a user-supplied V > 0.
inline CriterionReport check_general_V(const CoefficientModel& m, const Expr& V, const Region& region,
                                       const CriterionOptions& opt = {}) {
  const int d = m.dim();
  validate(region, d);
  if (V.dim() != d) throw ConfigError("V has the wrong dimension");
  auto eval_point = [&](std::span<const double> x, double& lhs, double& rhs) {
    const double v = V.eval(x);
    if (!(v > 0.0))
      throw ConfigError("V must be positive; V = " + std::to_string(v) + " at a sample point");
    lhs = apply_generator(m, V, x);
    rhs = v;
    return true;
  };
  auto run = [&](const Region& r) {
    CriterionReport tmp;
    CriterionOptions o = opt;
    o.M.reset();
    detail::sample_criterion(r, d, o, tmp, eval_point);
    return tmp.minimal_M;
  };
  CriterionReport rep;
  rep.criterion = Criterion::general_v;
  rep.region = region;
  rep.M = opt.M;
  detail::sample_criterion(region, d, opt, rep, eval_point);
  detail::stability_and_saturation(region, opt, rep, run);
  rep.notes.push_back("proof-pattern extension with V = " + V.str() + "; not a stated theorem");
  detail::scope_note(m, rep);
  return rep;
}

inline nlohmann::json to_json(const CriterionReport& r) {
  nlohmann::json j;
  j["criterion"] = to_string(r.criterion);
  j["region"] = to_json(r.region);
  j["grid"] = {{"resolution", r.region.resolution}, {"samples", r.samples}, {"excluded", r.excluded}};
  if (r.criterion == Criterion::c2bis || r.criterion == Criterion::c2bis_drift) {
    j["N0"] = r.N0;
    j["epsilon"] = r.epsilon;
  }
  j["minimal_M"] = r.minimal_M;
  j["sup_ratio"] = r.sup_ratio;
  j["worst_point"] = r.worst_point;
  if (r.M) {
    j["M"] = *r.M;
    j["satisfied_for_M"] = r.satisfied_for_M;
  } else {
    j["satisfied_for_M"] = nullptr;
  }
  j["violation_count"] = r.violation_count;
  auto& v = j["violations"] = nlohmann::json::array();
  for (const auto& w : r.violations) v.push_back({{"x", w.x}, {"lhs", w.lhs}, {"rhs", w.rhs}});
  if (r.refined_minimal_M) {
    j["refinement"] = {{"minimal_M", *r.refined_minimal_M}, {"stable", r.refinement_stable}};
  }
  auto& s = j["saturation"] = nlohmann::json::object();
  s["non_saturating"] = r.non_saturating;
  auto& rows = s["radii"] = nlohmann::json::array();
  for (const auto& [R, M] : r.saturation) rows.push_back({{"radius", R}, {"minimal_M", M}});
  j["notes"] = r.notes;
  return j;
}

}  // namespace sdelab
