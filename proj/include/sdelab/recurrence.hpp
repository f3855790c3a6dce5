#pragma once

// Volume growth of m = rho dx:
//   v1(r) = int_{B_r} <A x, x>/|x|^2 dm,  v2(r) = int_{B_r} |<B x, x>| dm,
//   v = v1 + v2,  a(n) = int_1^n r / v(r) dr,
// and the sufficient recurrence test "a(n) -> inf and log(v2(n) v 1)/a(n) -> 0".

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdelab/density.hpp"
#include "sdelab/lyapunov.hpp"
#include "sdelab/model.hpp"
#include "sdelab/quadrature.hpp"

namespace sdelab {

enum class RecurrenceVerdict { satisfied, not_satisfied, inconclusive };

inline const char* to_string(RecurrenceVerdict v) {
  switch (v) {
    case RecurrenceVerdict::satisfied: return "satisfied";
    case RecurrenceVerdict::not_satisfied: return "not_satisfied";
    default: return "inconclusive";
  }
}

struct VolumeGrowthTable {
  int dim = 0;
  std::vector<double> radii;  // increasing, starts at 1
  std::vector<double> v1;
  std::vector<double> v2;
  std::vector<double> v;
  std::vector<double> a;      // a(r) = int_1^r s/v(s) ds
  std::vector<double> mass;   // int_{B_r} rho dx
  std::vector<bool> trusted;  // false beyond 80% of a solved grid's half-width
  double scale = 1.0;         // rho was multiplied by this factor

  /// a at radius r by linear interpolation in log r.
  double a_at(double r) const { return interp(a, r); }
  double v2_at(double r) const { return interp(v2, r); }

 private:
  double interp(const std::vector<double>& y, double r) const {
    if (r <= radii.front()) return y.front();
    if (r >= radii.back()) return y.back();
    const auto it = std::lower_bound(radii.begin(), radii.end(), r);
    const std::size_t k = static_cast<std::size_t>(it - radii.begin());
    if (radii[k] == r) return y[k];
    const double t = std::log(r / radii[k - 1]) / std::log(radii[k] / radii[k - 1]);
    return (1.0 - t) * y[k - 1] + t * y[k];
  }
};

struct VolumeGrowthOptions {
  double max_radius = 1000.0;   // N
  int points_per_decade = 128;  // log-radius grid for a(n)
  int sphere_resolution = 8;
  std::optional<double> trusted_radius;  // set for truncated densities
};

/// v1, v2 by polar quadrature about the origin (Gauss-Legendre in r on each
/// annulus times a product sphere rule); a(r) by the trapezoid rule in r.
/// `b` may be empty (B = 0).
inline VolumeGrowthTable volume_growth(const CoefficientModel& m, const ScalarField& rho, const VectorField& b,
                                       const VolumeGrowthOptions& opt = {}) {
  const int d = m.dim();
  if (!(opt.max_radius > 1.0)) throw ConfigError("recurrence: maximum radius must exceed 1");
  const auto sphere = quad::sphere_rule(d, opt.sphere_resolution);
  const auto& gl = quad::gauss_legendre(8);

  // radial grid: [0,1] in 8 pieces, then log-spaced with exact decade nodes
  std::vector<double> edges;
  for (int k = 0; k <= 8; ++k) edges.push_back(k / 8.0);
  const double decades = std::log10(opt.max_radius);
  const int n_log = std::max(1, static_cast<int>(std::ceil(decades * opt.points_per_decade)));
  for (int k = 1; k <= n_log; ++k) {
    double r = std::pow(10.0, decades * k / n_log);
    const double rounded = std::round(r);
    if (std::fabs(r - rounded) < 1e-9 * r) r = rounded;
    edges.push_back(r);
  }
  edges.back() = opt.max_radius;

  std::vector<double> x(d), A(d * d), B(d);
  auto shell = [&](double lo, double hi, double& s0, double& s1, double& s2) {
    s0 = s1 = s2 = 0.0;
    for (std::size_t q = 0; q < gl.nodes.size(); ++q) {
      const double r = 0.5 * (lo + hi) + 0.5 * (hi - lo) * gl.nodes[q];
      const double jac = 0.5 * (hi - lo) * gl.weights[q] * std::pow(r, d - 1);
      for (std::size_t k = 0; k < sphere.size(); ++k) {
        const double* w = sphere.direction(k);
        for (int i = 0; i < d; ++i) x[i] = r * w[i];
        const double dens = rho(x);
        if (dens < 0.0) throw DomainError("recurrence: rho is negative");
        if (dens == 0.0) continue;  // underflow far out: no contribution, B need not exist
        m.diffusion(x, A);
        double aww = 0.0;  // <A x, x>/|x|^2 = <A w, w>
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) aww += A[i * d + j] * w[i] * w[j];
        const double wt = jac * sphere.weights[k] * dens;
        s0 += wt;
        s1 += wt * aww;
        if (b) {
          b(x, B);
          double bx = 0.0;
          for (int i = 0; i < d; ++i) bx += B[i] * x[i];
          s2 += wt * std::fabs(bx);
        }
      }
    }
  };

  VolumeGrowthTable t;
  t.dim = d;
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  for (std::size_t k = 1; k < edges.size(); ++k) {
    double s0, s1, s2;
    shell(edges[k - 1], edges[k], s0, s1, s2);
    c0 += s0;
    c1 += s1;
    c2 += s2;
    if (edges[k] >= 1.0) {
      t.radii.push_back(edges[k]);
      t.v1.push_back(c1);
      t.v2.push_back(c2);
      t.v.push_back(c1 + c2);
      t.mass.push_back(c0);
      t.trusted.push_back(!opt.trusted_radius || edges[k] <= *opt.trusted_radius);
    }
  }
  t.a.assign(t.radii.size(), 0.0);
  for (std::size_t k = 0; k < t.radii.size(); ++k)
    if (!(t.v[k] > 0.0)) throw NumericalError("recurrence: v(r) vanishes at r = " + std::to_string(t.radii[k]));
  for (std::size_t k = 1; k < t.radii.size(); ++k) {
    const double f0 = t.radii[k - 1] / t.v[k - 1], f1 = t.radii[k] / t.v[k];
    t.a[k] = t.a[k - 1] + 0.5 * (t.radii[k] - t.radii[k - 1]) * (f0 + f1);
  }
  return t;
}

/// Grid-density version: rho and B interpolated from the solved grid. Radii
/// beyond the largest centred ball inside the box are rejected; radii beyond
/// 80% of the box half-width are marked untrusted.
inline VolumeGrowthTable volume_growth(const CoefficientModel& m, const GridDensity& rho,
                                       const DriftDecomposition* dec, VolumeGrowthOptions opt = {}) {
  const Box& box = rho.grid.box();
  double half = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < box.lower.size(); ++k) half = std::min({half, -box.lower[k], box.upper[k]});
  if (opt.max_radius > half)
    throw ConfigError("recurrence: radius " + std::to_string(opt.max_radius) + " exceeds the grid support (" +
                      std::to_string(half) + ")");
  opt.trusted_radius = 0.8 * half;
  VectorField bf;
  std::shared_ptr<GridField> field;
  if (dec) {
    field = std::make_shared<GridField>(dec->b_field());
    bf = [field](std::span<const double> x, std::span<double> out) { field->eval(x, out); };
  }
  return volume_growth(m, rho.field(), bf, opt);
}

/// Same table for rho multiplied by `lambda` (v scales by lambda, a by 1/lambda).
inline VolumeGrowthTable rescaled(const VolumeGrowthTable& t, double lambda) {
  VolumeGrowthTable s = t;
  for (auto* col : {&s.v1, &s.v2, &s.v, &s.mass})
    for (double& x : *col) x *= lambda;
  for (double& x : s.a) x /= lambda;
  s.scale = t.scale * lambda;
  return s;
}

struct RecurrenceReport {
  RecurrenceVerdict verdict = RecurrenceVerdict::inconclusive;
  double N = 0.0;
  double a_N = 0.0;
  double delta_last = 0.0;      // a(N) - a(N/10)
  double delta_previous = 0.0;  // a(N/10) - a(N/100)
  double increment_ratio = 0.0;
  std::optional<double> tail_estimate;
  double ratio_N = 0.0;         // log(v2(N) v 1)/a(N)
  double ratio_previous = 0.0;  // same at N/10
  double growth_rate = 0.0;     // da/dln r over the last decade
  std::vector<std::string> notes;
};

/// Tail-based verdict on a table reaching N >= 100:
///  - a converges if the last-decade increment shrinks (q < 1) and the
///    geometric tail estimate is below 1e-3: not_satisfied;
///  - a diverges if q >= 0.9 and the last increment exceeds 1e-3;
///  - satisfied needs divergence plus log(v2 v 1)/a <= 0.05 and not increasing;
///  - a ratio above 0.05 that does not decrease gives not_satisfied.
inline RecurrenceReport recurrence_criterion(const VolumeGrowthTable& t) {
  RecurrenceReport r;
  r.N = t.radii.back();
  if (r.N < 100.0) {
    r.notes.push_back("table must reach N >= 100");
    return r;
  }
  const double N = r.N;
  const double a1 = t.a_at(N / 100.0), a2 = t.a_at(N / 10.0), a3 = t.a_at(N);
  r.a_N = a3;
  r.delta_previous = a2 - a1;
  r.delta_last = a3 - a2;
  r.increment_ratio = r.delta_previous > 0.0 ? r.delta_last / r.delta_previous : 0.0;
  r.growth_rate = r.delta_last / std::log(10.0);
  r.ratio_N = std::log(std::max(t.v2_at(N), 1.0)) / a3;
  r.ratio_previous = std::log(std::max(t.v2_at(N / 10.0), 1.0)) / a2;

  const double q = r.increment_ratio;
  const bool converging = q < 1.0 && [&] {
    r.tail_estimate = r.delta_last * q / (1.0 - q);
    return *r.tail_estimate < 1e-3;
  }();
  const bool diverging = q >= 0.9 && r.delta_last > 1e-3;
  const bool ratio_small = r.ratio_N <= 0.05 && r.ratio_N <= r.ratio_previous;
  const bool ratio_large = r.ratio_N > 0.05 && r.ratio_N >= r.ratio_previous;

  if (converging) {
    r.verdict = RecurrenceVerdict::not_satisfied;
    r.notes.push_back("a(n) converges numerically (tail estimate " + std::to_string(*r.tail_estimate) + ")");
  } else if (diverging && ratio_small) {
    r.verdict = RecurrenceVerdict::satisfied;
    r.notes.push_back("a(n) consistent with divergence at rate ~ " + std::to_string(r.growth_rate) +
                      " ln n up to n = " + std::to_string(N) + " (extrapolated, not a limit)");
  } else if (ratio_large) {
    r.verdict = RecurrenceVerdict::not_satisfied;
    r.notes.push_back("log(v2 v 1)/a(n) does not tend to 0");
  }
  if (t.dim >= 3 || r.verdict == RecurrenceVerdict::not_satisfied)
    r.notes.push_back("criterion is sufficient only; no transience conclusion");
  if (!t.trusted.empty() && !t.trusted.back())
    r.notes.push_back("radii beyond 80% of the box half-width use a truncated density");
  if (t.dim == 1) r.notes.push_back("d = 1: outside the d >= 2 setting of the criterion");
  return r;
}

inline nlohmann::json to_json(const RecurrenceReport& r) {
  nlohmann::json j;
  j["verdict"] = to_string(r.verdict);
  j["N"] = r.N;
  j["a_N"] = r.a_N;
  j["increment_last_decade"] = r.delta_last;
  j["increment_previous_decade"] = r.delta_previous;
  j["increment_ratio"] = r.increment_ratio;
  j["tail_estimate"] = r.tail_estimate ? nlohmann::json(*r.tail_estimate) : nlohmann::json(nullptr);
  j["log_v2_over_a_N"] = r.ratio_N;
  j["log_v2_over_a_previous"] = r.ratio_previous;
  j["growth_rate_per_ln_r"] = r.growth_rate;
  j["notes"] = r.notes;
  return j;
}

/// CSV with columns r, v1, v2, v, a, trusted.
inline std::string to_csv(const VolumeGrowthTable& t) {
  std::string s = "r,v1,v2,v,a,trusted\n";
  for (std::size_t k = 0; k < t.radii.size(); ++k) {
    s += to_chars_string(t.radii[k]) + "," + to_chars_string(t.v1[k]) + "," + to_chars_string(t.v2[k]) + "," +
         to_chars_string(t.v[k]) + "," + to_chars_string(t.a[k]) + "," + (t.trusted[k] ? "1" : "0") + "\n";
  }
  return s;
}

}  // namespace sdelab
