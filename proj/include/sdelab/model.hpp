#pragma once

// Coefficient data of dX = G(X)dt + sigma(X)dW with A = sigma sigma^T, the
// standing-hypothesis checkers, the generator L and the matrix square root.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdelab/errors.hpp"
#include "sdelab/expr.hpp"
#include "sdelab/linalg.hpp"
#include "sdelab/region.hpp"

namespace sdelab {

/// Textual model description, as read from a config file.
struct ModelSpec {
  int dim = 0;
  double p = 0.0;
  std::vector<std::vector<std::string>> A;                   // d rows of d entries
  std::vector<std::string> G;                                // d entries
  std::optional<std::vector<std::vector<std::string>>> sigma;  // d rows of m entries
  std::optional<std::string> rho;
};

/// Row-major dense matrix.
struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

class CoefficientModel {
 public:
  /// Parses and validates. Hard errors: p <= d, shape mismatches, parse
  /// errors. Sampled invariants (symmetry, sigma sigma^T = A, rho > 0) are
  /// reported through warnings().
  static CoefficientModel build(const ModelSpec& spec) {
    const int d = spec.dim;
    if (d < 1 || d > kMaxDim)
      throw ConfigError("dimension must be in [1, " + std::to_string(kMaxDim) + "]");
    if (!(spec.p > d))
      throw ConfigError("exponent p must exceed the dimension (p = " + std::to_string(spec.p) +
                        ", d = " + std::to_string(d) + ")");
    if (static_cast<int>(spec.A.size()) != d) throw ConfigError("A must have d rows");
    for (const auto& row : spec.A)
      if (static_cast<int>(row.size()) != d) throw ConfigError("A must be square (d x d)");
    if (static_cast<int>(spec.G.size()) != d) throw ConfigError("G must have d entries");

    CoefficientModel m;
    m.dim_ = d;
    m.p_ = spec.p;
    m.spec_ = spec;
    m.a_.resize(static_cast<std::size_t>(d) * d);
    std::vector<Expr> lower(static_cast<std::size_t>(d) * d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        Expr e = parse_entry(spec.A[i][j], d, "A", i, j);
        if (i <= j)
          m.a_[i * d + j] = std::move(e);
        else
          lower[i * d + j] = std::move(e);
      }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < i; ++j) m.a_[i * d + j] = m.a_[j * d + i];
    for (int i = 0; i < d; ++i) m.g_.push_back(parse_entry(spec.G[i], d, "G", i, -1));

    if (spec.sigma) {
      const auto& rows = *spec.sigma;
      if (static_cast<int>(rows.size()) != d) throw ConfigError("sigma must have d rows");
      const int cols = static_cast<int>(rows.front().size());
      if (cols < 1) throw ConfigError("sigma must have at least one column");
      for (const auto& row : rows)
        if (static_cast<int>(row.size()) != cols)
          throw ConfigError("sigma rows have inconsistent lengths");
      m.noise_dim_ = cols;
      for (int i = 0; i < d; ++i)
        for (int k = 0; k < cols; ++k) m.sigma_.push_back(parse_entry(rows[i][k], d, "sigma", i, k));
    } else {
      m.noise_dim_ = d;
    }
    if (spec.rho) m.rho_ = Expr::parse(*spec.rho, d);

    m.constant_diffusion_ = std::all_of(m.a_.begin(), m.a_.end(),
                                        [](const Expr& e) { return e.is_constant(); });
    m.constant_sigma_ = m.has_sigma() && std::all_of(m.sigma_.begin(), m.sigma_.end(),
                                                     [](const Expr& e) { return e.is_constant(); });
    m.sample_invariants(lower);
    return m;
  }

  /// Convenience builder from rows of expression strings.
  static CoefficientModel from_strings(int dim, double p, std::vector<std::vector<std::string>> A,
                                       std::vector<std::string> G,
                                       std::optional<std::vector<std::vector<std::string>>> sigma = {},
                                       std::optional<std::string> rho = {}) {
    return build(ModelSpec{dim, p, std::move(A), std::move(G), std::move(sigma), std::move(rho)});
  }

  int dim() const noexcept { return dim_; }
  double p() const noexcept { return p_; }
  int noise_dim() const noexcept { return noise_dim_; }
  bool has_sigma() const noexcept { return !sigma_.empty(); }
  bool constant_diffusion() const noexcept { return constant_diffusion_; }
  /// The supporting theory is stated for d >= 2; d = 1 is a debugging mode.
  bool in_theory_scope() const noexcept { return dim_ >= 2; }
  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  const Expr& a(int i, int j) const { return a_[i * dim_ + j]; }
  const Expr& g(int i) const { return g_[i]; }
  const Expr& sigma(int i, int k) const { return sigma_[i * noise_dim_ + k]; }
  const std::optional<Expr>& rho() const noexcept { return rho_; }

  /// A(x), row-major d x d.
  void diffusion(std::span<const double> x, std::span<double> out) const {
    for (int i = 0; i < dim_; ++i)
      for (int j = i; j < dim_; ++j) {
        const double v = a_[i * dim_ + j].eval(x);
        out[i * dim_ + j] = v;
        out[j * dim_ + i] = v;
      }
  }

  void drift(std::span<const double> x, std::span<double> out) const {
    for (int i = 0; i < dim_; ++i) out[i] = g_[i].eval(x);
  }

  /// The supplied sigma(x), row-major d x m.
  void dispersion(std::span<const double> x, std::span<double> out) const {
    if (!has_sigma()) throw ConfigError("model has no sigma");
    for (std::size_t k = 0; k < sigma_.size(); ++k) out[k] = sigma_[k].eval(x);
  }

  bool constant_dispersion() const noexcept { return constant_sigma_; }

  /// (sum_j d_j a_ij(x))_i.
  void diffusion_divergence(std::span<const double> x, std::span<double> out) const {
    for (int i = 0; i < dim_; ++i) {
      double acc = 0.0;
      for (int j = 0; j < dim_; ++j) {
        const Expr& e = a(i, j);
        if (!e.is_constant()) acc += e.derive(x, j);
      }
      out[i] = acc;
    }
  }

 private:
  int dim_ = 0;
  double p_ = 0.0;
  int noise_dim_ = 0;
  bool constant_diffusion_ = false;
  bool constant_sigma_ = false;
  ModelSpec spec_;
  std::vector<Expr> a_;
  std::vector<Expr> g_;
  std::vector<Expr> sigma_;
  std::optional<Expr> rho_;
  std::vector<std::string> warnings_;

  static Expr parse_entry(const std::string& s, int d, const char* what, int i, int j) {
    try {
      return Expr::parse(s, d);
    } catch (const ParseError& e) {
      std::string where = std::string(what) + "[" + std::to_string(i + 1);
      if (j >= 0) where += "," + std::to_string(j + 1);
      where += "]";
      throw ConfigError(where + ": " + e.what());
    }
  }

  // Coarse check of the sampled invariants on the box [-1, 1]^d.
  void sample_invariants(const std::vector<Expr>& lower) {
    Region probe = Region::box(std::vector<double>(dim_, -1.0), std::vector<double>(dim_, 1.0),
                               dim_ <= 3 ? 5 : 3);
    probe.jitter = 16;
    const PointSet pts = sample(probe, dim_);
    std::vector<double> A(dim_ * dim_), S(dim_ * noise_dim_);
    bool asym = false, sig = false, rho_bad = false;
    for (std::size_t n = 0; n < pts.size(); ++n) {
      const auto x = pts[n];
      try {
        diffusion(x, A);
        for (int i = 0; i < dim_; ++i)
          for (int j = 0; j < i; ++j) {
            const double l = lower[i * dim_ + j].eval(x);
            if (std::fabs(l - A[i * dim_ + j]) > 1e-12 * (1.0 + std::fabs(l))) asym = true;
          }
        if (has_sigma()) {
          dispersion(x, S);
          double err = 0.0;
          for (int i = 0; i < dim_; ++i)
            for (int j = 0; j < dim_; ++j) {
              double ss = 0.0;
              for (int k = 0; k < noise_dim_; ++k) ss += S[i * noise_dim_ + k] * S[j * noise_dim_ + k];
              err += (ss - A[i * dim_ + j]) * (ss - A[i * dim_ + j]);
            }
          if (std::sqrt(err) > 1e-8 * std::max(1.0, frobenius(A))) sig = true;
        }
        if (rho_ && !(rho_->eval(x) > 0.0)) rho_bad = true;
      } catch (const DomainError&) {
        // isolated singular points are allowed (a.e. data)
      }
    }
    if (asym) warnings_.push_back("A is not symmetric at sampled points; the upper triangle is used");
    if (sig) warnings_.push_back("sigma sigma^T differs from A at sampled points");
    if (rho_bad) warnings_.push_back("rho is not strictly positive at sampled points");
    if (dim_ == 1) warnings_.push_back("d = 1 is outside the supported theory (d >= 2)");
  }
};

/// Unique symmetric positive-definite sigma(x) with sigma(x)^2 = A(x).
inline DenseMatrix sqrt_A(const CoefficientModel& m, std::span<const double> x) {
  const int d = m.dim();
  std::vector<double> A(d * d);
  m.diffusion(x, A);
  DenseMatrix s(d, d);
  spd_sqrt(A, d, s.data);
  return s;
}

/// (Lu)(x) = w * sum a_ij d_i d_j u + sum g_i d_i u, with w = 1/2 for the
/// true generator. Other weights exist only for regression guards.
inline double apply_generator(const CoefficientModel& m, const Expr& u, std::span<const double> x,
                              double second_order_weight = 0.5) {
  const int d = m.dim();
  if (u.dim() != d) throw ConfigError("test function dimension does not match the model");
  if (u.is_constant()) return 0.0;
  std::array<double, kMaxDim> grad{};
  std::array<double, kMaxDim * kMaxDim> hess{};
  std::array<double, kMaxDim * kMaxDim> A{};
  std::array<double, kMaxDim> G{};
  u.hessian(x, std::span(grad.data(), d), std::span(hess.data(), d * d));
  m.diffusion(x, std::span(A.data(), d * d));
  m.drift(x, std::span(G.data(), d));
  double second = 0.0, first = 0.0;
  for (int i = 0; i < d; ++i) {
    first += G[i] * grad[i];
    for (int j = 0; j < d; ++j) second += A[i * d + j] * hess[i * d + j];
  }
  return second_order_weight * second + first;
}

// ---------------------------------------------------------------------------
// Ellipticity

struct EllipticityReport {
  Region region;
  std::size_t samples = 0;
  double min_eigenvalue = 0.0;  // m_B
  double max_eigenvalue = 0.0;  // M_B
  std::vector<double> min_point;
  bool pass = false;
  std::optional<double> global_lower_bound;  // running C_sigma over regions
  std::vector<std::vector<double>> faults;
};

inline EllipticityReport check_ellipticity(const CoefficientModel& m, const Region& region) {
  const int d = m.dim();
  EllipticityReport rep;
  rep.region = region;
  const PointSet pts = sample(region, d);
  rep.samples = pts.size();
  rep.min_eigenvalue = std::numeric_limits<double>::infinity();
  rep.max_eigenvalue = -std::numeric_limits<double>::infinity();
  std::vector<double> A(d * d);
  for (std::size_t n = 0; n < pts.size(); ++n) {
    const auto x = pts[n];
    try {
      m.diffusion(x, A);
    } catch (const DomainError& e) {
      throw DomainError(std::string(e.what()) + " at sample point " + nlohmann::json(std::vector<double>(x.begin(), x.end())).dump());
    }
    const SymmetricEigen eig = jacobi_eigen(A, d);
    if (eig.values[0] < rep.min_eigenvalue) {
      rep.min_eigenvalue = eig.values[0];
      rep.min_point.assign(x.begin(), x.end());
    }
    rep.max_eigenvalue = std::max(rep.max_eigenvalue, eig.values[d - 1]);
  }
  rep.pass = rep.min_eigenvalue > 0.0;
  return rep;
}

/// Ellipticity on several regions with the running lower bound over all of
/// them (the constant of a global ellipticity condition).
inline std::vector<EllipticityReport> check_ellipticity(const CoefficientModel& m,
                                                        const std::vector<Region>& regions) {
  std::vector<EllipticityReport> out;
  double bound = std::numeric_limits<double>::infinity();
  for (const auto& r : regions) {
    out.push_back(check_ellipticity(m, r));
    bound = std::min(bound, out.back().min_eigenvalue);
    out.back().global_lower_bound = bound;
  }
  return out;
}

inline nlohmann::json to_json(const EllipticityReport& r) {
  nlohmann::json j;
  j["region"] = to_json(r.region);
  j["samples"] = r.samples;
  j["m_B"] = r.min_eigenvalue;
  j["M_B"] = r.max_eigenvalue;
  j["min_point"] = r.min_point;
  j["pass"] = r.pass;
  if (r.global_lower_bound) j["global_lower_bound"] = *r.global_lower_bound;
  j["note"] = r.pass ? "no violation found on " + std::to_string(r.samples) + " points"
                     : "degenerate or negative eigenvalue found";
  return j;
}

// ---------------------------------------------------------------------------
// Local integrability of |G|^p or |grad A|^p

enum class IntegrandKind { drift, grad_A };
enum class IntegrabilityVerdict { finite, diverging, inconclusive };

inline const char* to_string(IntegrabilityVerdict v) {
  switch (v) {
    case IntegrabilityVerdict::finite: return "finite";
    case IntegrabilityVerdict::diverging: return "diverging";
    default: return "inconclusive";
  }
}

struct IntegrabilityReport {
  IntegrandKind which = IntegrandKind::drift;
  double p_test = 0.0;
  IntegrabilityVerdict verdict = IntegrabilityVerdict::inconclusive;
  std::vector<double> estimates;       // one per refinement level
  std::vector<double> excluded_radii;  // excised ball radius per level (relative)
  std::vector<double> singular_point;  // centre of the refinement
  bool singularity_detected = false;
  std::size_t faulted_nodes = 0;
};

namespace detail {

inline double field_norm(const CoefficientModel& m, IntegrandKind which, std::span<const double> x) {
  const int d = m.dim();
  double s = 0.0;
  if (which == IntegrandKind::drift) {
    for (int i = 0; i < d; ++i) {
      const double g = m.g(i).eval(x);
      s += g * g;
    }
  } else {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k) {
          const Expr& e = m.a(i, j);
          if (e.is_constant()) continue;
          const double v = e.derive(x, k);
          s += v * v;
        }
  }
  return std::sqrt(s);
}

// Distance from s along unit direction w to the boundary of a convex region
// containing s (ball or box).
inline double ray_exit(const Region& r, std::span<const double> s, const double* w, int d) {
  if (const auto* b = std::get_if<Ball>(&r.shape)) {
    double bw = 0.0, cc = 0.0;
    for (int i = 0; i < d; ++i) {
      const double o = s[i] - b->center[i];
      bw += o * w[i];
      cc += o * o;
    }
    cc -= b->radius * b->radius;
    const double disc = bw * bw - cc;
    return disc <= 0.0 ? 0.0 : std::max(0.0, -bw + std::sqrt(disc));
  }
  const auto& bx = std::get<Box>(r.shape);
  double t = std::numeric_limits<double>::infinity();
  for (int i = 0; i < d; ++i) {
    if (w[i] > 0.0) t = std::min(t, (bx.upper[i] - s[i]) / w[i]);
    if (w[i] < 0.0) t = std::min(t, (bx.lower[i] - s[i]) / w[i]);
  }
  return std::max(0.0, t);
}

}  // namespace detail

/// Estimates the integral of |field|^p_test over a bounded convex region on
/// a sequence of estimates that excise shrinking balls (radius ratio 1/4 per
/// level) around the detected singular point, in polar coordinates about it.
/// Verdicts: diverging if the estimate grows by >= 1.5x over 3 consecutive
/// refinements; finite once the relative change drops below 1e-3.
inline IntegrabilityReport check_integrability(const CoefficientModel& m, const Region& region,
                                               IntegrandKind which, double p_test,
                                               int max_levels = 24) {
  const int d = m.dim();
  validate(region, d);
  if (std::holds_alternative<Annulus>(region.shape)) {
    // annulus = outer ball minus inner ball; integrate the difference
    const auto& a = std::get<Annulus>(region.shape);
    Region outer = Region::centered_ball(d, a.outer, region.resolution);
    Region inner = Region::centered_ball(d, a.inner, region.resolution);
    auto ro = check_integrability(m, outer, which, p_test, max_levels);
    auto ri = check_integrability(m, inner, which, p_test, max_levels);
    if (ri.verdict == IntegrabilityVerdict::finite && ro.verdict == IntegrabilityVerdict::finite) {
      for (std::size_t k = 0; k < ro.estimates.size(); ++k)
        ro.estimates[k] -= ri.estimates[std::min(k, ri.estimates.size() - 1)];
    } else if (ri.verdict == IntegrabilityVerdict::diverging &&
               ro.singular_point.size() == ri.singular_point.size()) {
      // singularity strictly inside the hole does not affect the annulus
      double rs = 0.0;
      for (double v : ri.singular_point) rs += v * v;
      if (std::sqrt(rs) < a.inner * 0.999) ro.verdict = IntegrabilityVerdict::inconclusive;
    }
    ro.faulted_nodes += ri.faulted_nodes;
    return ro;
  }

  IntegrabilityReport rep;
  rep.which = which;
  rep.p_test = p_test;

  auto integrand = [&](std::span<const double> x, bool& fault) -> double {
    try {
      fault = false;
      return std::pow(detail::field_norm(m, which, x), p_test);
    } catch (const DomainError&) {
      fault = true;
      return 0.0;
    }
  };

  // Locate the singular point: faults or an unbounded local maximum.
  const Box bb = bounding_box(region, d);
  std::vector<double> centre(d);
  for (int i = 0; i < d; ++i) centre[i] = 0.5 * (bb.lower[i] + bb.upper[i]);
  {
    Region coarse = region;
    coarse.resolution = std::max(region.resolution, 9) | 1;
    coarse.jitter = 0;
    const PointSet pts = sample(coarse, d);
    double best = -1.0;
    std::vector<double> best_x = centre;
    bool fault_found = false;
    for (std::size_t n = 0; n < pts.size(); ++n) {
      bool fault;
      const double v = integrand(pts[n], fault);
      if (fault) {
        if (!fault_found) best_x.assign(pts[n].begin(), pts[n].end());
        fault_found = true;
        ++rep.faulted_nodes;
      } else if (!fault_found && v > best) {
        best = v;
        best_x.assign(pts[n].begin(), pts[n].end());
      }
    }
    if (fault_found) {
      rep.singularity_detected = true;
    } else {
      // zoom towards the maximum; an integrable bump stays bounded
      double h = 0.0;
      for (int i = 0; i < d; ++i) h = std::max(h, (bb.upper[i] - bb.lower[i]) / (coarse.resolution - 1));
      double prev = best;
      int growth = 0;
      std::vector<double> y(d);
      for (int level = 0; level < 40 && !rep.singularity_detected; ++level) {
        h *= 0.5;
        std::vector<int> idx(d, -2);
        std::vector<double> cand = best_x;
        double cand_v = prev;
        for (;;) {
          for (int i = 0; i < d; ++i) y[i] = best_x[i] + h * idx[i];
          if (contains(region, y)) {
            bool fault;
            const double v = integrand(y, fault);
            if (fault) {
              cand = y;
              rep.singularity_detected = true;
              ++rep.faulted_nodes;
              break;
            }
            if (v > cand_v) {
              cand_v = v;
              cand = y;
            }
          }
          int k = 0;
          while (k < d && ++idx[k] == 3) idx[k++] = -2;
          if (k == d) break;
        }
        best_x = cand;
        if (cand_v > 1.5 * prev && prev > 0.0) ++growth; else growth = 0;
        prev = cand_v;
        if (growth >= 6) rep.singularity_detected = true;
      }
    }
    rep.singular_point = rep.singularity_detected ? best_x : centre;
  }

  // Polar quadrature about the singular point.
  const auto sphere = quad::sphere_rule(d, 16);
  const auto& gl = quad::gauss_legendre(8);
  const std::vector<double>& s = rep.singular_point;
  std::vector<double> reach(sphere.size());
  for (std::size_t k = 0; k < sphere.size(); ++k)
    reach[k] = detail::ray_exit(region, s, sphere.direction(k), d);

  // shell contribution between fractions [lo, hi] of the reach
  std::vector<double> x(d);
  auto shell = [&](double lo, double hi) {
    double total = 0.0;
    const double llo = std::log(lo), lhi = std::log(hi);
    for (std::size_t k = 0; k < sphere.size(); ++k) {
      if (reach[k] <= 0.0) continue;
      const double* w = sphere.direction(k);
      double radial = 0.0;
      for (std::size_t q = 0; q < gl.nodes.size(); ++q) {
        // substitute r = reach * exp(t), dr = r dt
        const double t = 0.5 * (llo + lhi) + 0.5 * (lhi - llo) * gl.nodes[q];
        const double r = reach[k] * std::exp(t);
        for (int i = 0; i < d; ++i) x[i] = s[i] + r * w[i];
        bool fault;
        const double v = integrand(x, fault);
        if (fault) {
          ++rep.faulted_nodes;
          continue;
        }
        radial += gl.weights[q] * v * std::pow(r, d);
      }
      total += sphere.weights[k] * 0.5 * (lhi - llo) * radial;
    }
    return total;
  };

  // Outer part split into dyadic sub-shells for accuracy.
  double estimate = 0.0;
  for (double hi = 1.0; hi > 0.26; hi *= 0.5) estimate += shell(0.5 * hi, hi);
  double lo = 0.25;
  rep.estimates.push_back(estimate);
  rep.excluded_radii.push_back(lo);
  int growth_run = 0;
  for (int level = 1; level <= max_levels; ++level) {
    const double add = shell(0.5 * lo, lo) + shell(0.25 * lo, 0.5 * lo);
    const double prev = estimate;
    estimate += add;
    lo *= 0.25;
    rep.estimates.push_back(estimate);
    rep.excluded_radii.push_back(lo);
    if (prev > 0.0 && estimate >= 1.5 * prev)
      ++growth_run;
    else
      growth_run = 0;
    if (growth_run >= 3) {
      rep.verdict = IntegrabilityVerdict::diverging;
      return rep;
    }
    if (!std::isfinite(estimate)) {
      rep.verdict = IntegrabilityVerdict::diverging;
      return rep;
    }
    const double rel = std::fabs(estimate - prev) / std::max(std::fabs(estimate), 1e-300);
    if (rel < 1e-3 && level >= 2) {
      rep.verdict = IntegrabilityVerdict::finite;
      return rep;
    }
  }
  rep.verdict = IntegrabilityVerdict::inconclusive;
  return rep;
}

inline nlohmann::json to_json(const IntegrabilityReport& r) {
  nlohmann::json j;
  j["which"] = r.which == IntegrandKind::drift ? "drift" : "grad_A";
  j["p_test"] = r.p_test;
  j["verdict"] = to_string(r.verdict);
  j["estimates"] = r.estimates;
  j["excluded_radius_fraction"] = r.excluded_radii;
  j["refinement_center"] = r.singular_point;
  j["singularity_detected"] = r.singularity_detected;
  j["faulted_nodes"] = r.faulted_nodes;
  return j;
}

}  // namespace sdelab
