#pragma once

// Stationary Fokker-Planck solve on a truncated box. Unknowns live at cell
// centres; fluxes F_i = (g_i - 1/2 sum_j d_j a_ij) rho - 1/2 sum_j a_ij d_j rho
// are discretized with exponential fitting (Scharfetter-Gummel) on the
// diagonal part and centred differences on the cross terms; the boundary is
// zero-flux. The density is the null vector of the resulting operator.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <nlohmann/json.hpp>

#include "sdelab/errors.hpp"
#include "sdelab/lyapunov.hpp"
#include "sdelab/model.hpp"
#include "sdelab/region.hpp"

namespace sdelab {

using ScalarField = std::function<double(std::span<const double>)>;

/// Uniform cell-centred grid on a box; x1 is the slowest index.
class CellGrid {
 public:
  CellGrid() = default;
  CellGrid(Box box, std::vector<int> cells) : box_(std::move(box)), n_(std::move(cells)) {
    const int d = dim();
    if (d < 1 || static_cast<int>(box_.upper.size()) != d) throw ConfigError("grid: box and shape disagree");
    stride_.assign(d, 1);
    for (int k = d - 2; k >= 0; --k) stride_[k] = stride_[k + 1] * static_cast<std::size_t>(n_[k + 1]);
    for (int k = 0; k < d; ++k) {
      if (n_[k] < 2) throw ConfigError("grid: need at least 2 cells per axis");
      if (!(box_.lower[k] < box_.upper[k])) throw ConfigError("grid: box corners are not ordered");
      h_.push_back((box_.upper[k] - box_.lower[k]) / n_[k]);
    }
  }

  int dim() const noexcept { return static_cast<int>(n_.size()); }
  const Box& box() const noexcept { return box_; }
  const std::vector<int>& shape() const noexcept { return n_; }
  std::size_t size() const noexcept { return n_.empty() ? 0 : stride_[0] * n_[0]; }
  double h(int k) const { return h_[k]; }
  std::size_t stride(int k) const { return stride_[k]; }
  double cell_volume() const {
    double v = 1.0;
    for (double x : h_) v *= x;
    return v;
  }

  int index(std::size_t cell, int k) const { return static_cast<int>((cell / stride_[k]) % n_[k]); }

  void center(std::size_t cell, std::span<double> x) const {
    for (int k = 0; k < dim(); ++k) x[k] = box_.lower[k] + (index(cell, k) + 0.5) * h_[k];
  }

  bool contains(std::span<const double> x) const {
    for (int k = 0; k < dim(); ++k)
      if (x[k] < box_.lower[k] || x[k] > box_.upper[k]) return false;
    return true;
  }

  /// Multilinear interpolation of cell data; constant extrapolation in the
  /// half cell next to each face. Throws outside the box.
  double interpolate(std::span<const double> values, std::span<const double> x) const {
    return interpolate_with([&](std::size_t c) { return values[c]; }, x);
  }

  template <class At>
  double interpolate_with(At&& at, std::span<const double> x) const {
    if (!contains(x)) throw ConfigError("point outside the solved grid");
    const int d = dim();
    std::array<int, kMaxDim> i0{};
    std::array<double, kMaxDim> t{};
    for (int k = 0; k < d; ++k) {
      double s = (x[k] - box_.lower[k]) / h_[k] - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(n_[k] - 1));
      int i = std::min(static_cast<int>(s), n_[k] - 2);
      i0[k] = i;
      t[k] = s - i;
    }
    double acc = 0.0;
    for (unsigned corner = 0; corner < (1u << d); ++corner) {
      double w = 1.0;
      std::size_t cell = 0;
      for (int k = 0; k < d; ++k) {
        const bool up = (corner >> k) & 1u;
        w *= up ? t[k] : 1.0 - t[k];
        cell += stride_[k] * static_cast<std::size_t>(i0[k] + (up ? 1 : 0));
      }
      if (w != 0.0) acc += w * at(cell);
    }
    return acc;
  }

 private:
  Box box_;
  std::vector<int> n_;
  std::vector<std::size_t> stride_;
  std::vector<double> h_;
};

/// Positive grid density normalized to unit mass over its box.
struct GridDensity {
  CellGrid grid;
  std::vector<double> values;
  double normalization = 1.0;  // mass of the solution before normalization (unit peak for solves)
  double residual = 0.0;       // |L*_h rho|_2 / |rho|_2
  std::string scheme;          // "exponential-fitting", "monotone-cross-fallback" or "explicit"
  std::vector<double> residual_history;

  int dim() const { return grid.dim(); }
  double mass() const {
    return std::accumulate(values.begin(), values.end(), 0.0) * grid.cell_volume();
  }
  double operator()(std::span<const double> x) const { return grid.interpolate(values, x); }
  ScalarField field() const {
    return [this](std::span<const double> x) { return (*this)(x); };
  }
};

namespace detail {

inline double bernoulli(double z) {
  if (std::fabs(z) < 1e-6) return 1.0 - 0.5 * z + z * z / 12.0;
  return z / std::expm1(z);
}

struct Term {
  std::size_t cell;
  double coef;
};

// `monotone` replaces the centred cross differences by one-sided ones chosen
// by the sign of a_ij, so that only axial neighbours get negative weights.
enum class FluxScheme { fitted, monotone };

// Assembles M with d(rho)/dt = M rho.
inline Eigen::SparseMatrix<double> assemble_adjoint(const CoefficientModel& m, const CellGrid& grid,
                                                    FluxScheme scheme) {
  const int d = grid.dim();
  const std::size_t N = grid.size();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(N * (2 + 4 * d * d));
  std::vector<double> xf(d), A(d * d), G(d), divA(d, 0.0);
  std::vector<Term> terms;

  auto neighbour = [&](std::size_t cell, int j, int step) -> std::size_t {
    const int i = grid.index(cell, j) + step;
    if (i < 0 || i >= grid.shape()[j]) return cell;
    return step > 0 ? cell + grid.stride(j) : cell - grid.stride(j);
  };
  // centred d_j rho at a cell with one-sided closure at the faces
  auto centred = [&](std::size_t cell, int j, double weight) {
    const std::size_t up = neighbour(cell, j, +1), dn = neighbour(cell, j, -1);
    const double dist = grid.h(j) * ((up != cell ? 1 : 0) + (dn != cell ? 1 : 0));
    terms.push_back({up, weight / dist});
    terms.push_back({dn, -weight / dist});
  };
  auto forward = [&](std::size_t cell, int j, double weight) {
    const std::size_t up = neighbour(cell, j, +1);
    if (up == cell) return centred(cell, j, weight);
    terms.push_back({up, weight / grid.h(j)});
    terms.push_back({cell, -weight / grid.h(j)});
  };
  auto backward = [&](std::size_t cell, int j, double weight) {
    const std::size_t dn = neighbour(cell, j, -1);
    if (dn == cell) return centred(cell, j, weight);
    terms.push_back({cell, weight / grid.h(j)});
    terms.push_back({dn, -weight / grid.h(j)});
  };

  for (int i = 0; i < d; ++i) {
    const double h = grid.h(i);
    for (std::size_t P = 0; P < N; ++P) {
      if (grid.index(P, i) == grid.shape()[i] - 1) continue;  // boundary face: no flux
      const std::size_t E = P + grid.stride(i);
      grid.center(P, xf);
      xf[i] += 0.5 * h;
      m.diffusion(xf, A);
      m.drift(xf, G);
      if (!m.constant_diffusion()) m.diffusion_divergence(xf, divA);
      const double D = 0.5 * A[i * d + i];
      if (!(D > 0.0)) throw ConfigError("A is not elliptic at a face of the grid");
      const double v = G[i] - 0.5 * divA[i];
      terms.clear();
      // the diagonal part is fitted in both schemes; it is already monotone
      const double w = v * h / D;
      terms.push_back({P, D / h * bernoulli(-w)});
      terms.push_back({E, -D / h * bernoulli(w)});
      for (int j = 0; j < d; ++j) {
        if (j == i) continue;
        const double a = A[i * d + j];
        if (a == 0.0) continue;
        const double wgt = -0.5 * a * 0.5;  // -a/2 times the two-point average
        if (scheme == FluxScheme::fitted) {
          centred(P, j, wgt);
          centred(E, j, wgt);
        } else if (a > 0.0) {
          forward(E, j, wgt);
          backward(P, j, wgt);
        } else {
          forward(P, j, wgt);
          backward(E, j, wgt);
        }
      }
      for (const auto& t : terms) {
        trip.emplace_back(static_cast<int>(P), static_cast<int>(t.cell), -t.coef / h);
        trip.emplace_back(static_cast<int>(E), static_cast<int>(t.cell), t.coef / h);
      }
    }
  }
  Eigen::SparseMatrix<double> M(static_cast<int>(N), static_cast<int>(N));
  M.setFromTriplets(trip.begin(), trip.end());
  M.makeCompressed();
  return M;
}

inline double inf_norm(const Eigen::SparseMatrix<double>& M) {
  Eigen::VectorXd rows = Eigen::VectorXd::Zero(M.rows());
  for (int k = 0; k < M.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(M, k); it; ++it) rows[it.row()] += std::fabs(it.value());
  return rows.maxCoeff();
}

// Null vector by shifted inverse iteration on a sparse LU factorization.
inline Eigen::VectorXd null_vector(const Eigen::SparseMatrix<double>& M, std::vector<double>& history,
                                   double tol) {
  const int N = static_cast<int>(M.rows());
  const double shift = 1e-10 * inf_norm(M);
  Eigen::SparseMatrix<double> K = M;
  for (int k = 0; k < N; ++k) K.coeffRef(k, k) -= shift;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(K);
  if (lu.info() != Eigen::Success) throw NumericalError("sparse LU factorization failed: " + lu.lastErrorMessage());
  Eigen::VectorXd y = Eigen::VectorXd::Ones(N) / std::sqrt(static_cast<double>(N));
  for (int it = 0; it < 12; ++it) {
    Eigen::VectorXd z = lu.solve(y);
    if (lu.info() != Eigen::Success) throw NumericalError("sparse LU solve failed");
    const double nz = z.norm();
    if (!(nz > 0.0) || !std::isfinite(nz)) throw NumericalError("inverse iteration broke down");
    y = z / nz;
    if (y.sum() < 0.0) y = -y;
    history.push_back((M * y).norm());
    if (history.back() <= tol && it >= 1) break;
  }
  return y;
}

}  // namespace detail

struct SolveOptions {
  double tolerance = 1e-8;        // |L*_h rho| / |rho|
  bool check_ellipticity = true;
  bool allow_fallback = true;
  bool force_fallback = false;    // testing hook for the monotone cross stencil
};

/// Solves for the stationary density on `box` with `cells` cells per axis.
inline GridDensity solve_stationary(const CoefficientModel& m, const Box& box, std::vector<int> cells,
                                    const SolveOptions& opt = {}) {
  const int d = m.dim();
  if (static_cast<int>(cells.size()) == 1 && d > 1) cells.assign(d, cells[0]);
  if (static_cast<int>(cells.size()) != d || static_cast<int>(box.lower.size()) != d)
    throw ConfigError("solve: box/shape dimension does not match the model");
  for (int k = 0; k < d; ++k)
    if (!(box.lower[k] < 0.0 && box.upper[k] > 0.0)) throw ConfigError("solve: the box must contain the origin");
  if (opt.check_ellipticity) {
    Region r = Region::box(box.lower, box.upper, d <= 2 ? 41 : 11);
    const auto rep = check_ellipticity(m, r);
    if (!rep.pass) throw ConfigError("solve: A is not uniformly elliptic on the box");
  }
  GridDensity out;
  out.grid = CellGrid(box, cells);
  auto attempt = [&](detail::FluxScheme s) {
    const auto M = detail::assemble_adjoint(m, out.grid, s);
    out.residual_history.clear();
    const Eigen::VectorXd y = detail::null_vector(M, out.residual_history, 1e-3 * opt.tolerance);
    out.values.assign(y.data(), y.data() + y.size());
    out.residual = (M * y).norm() / y.norm();
    out.scheme = s == detail::FluxScheme::fitted ? "exponential-fitting" : "monotone-cross-fallback";
  };
  auto positive = [&] { return std::all_of(out.values.begin(), out.values.end(), [](double v) { return v > 0.0; }); };
  if (!opt.force_fallback) attempt(detail::FluxScheme::fitted);
  if (opt.force_fallback || (!positive() && opt.allow_fallback)) attempt(detail::FluxScheme::monotone);
  if (!positive()) {
    const double lo = *std::min_element(out.values.begin(), out.values.end());
    throw NumericalError("positivity failure: minimum value " + std::to_string(lo) + " with scheme " + out.scheme);
  }
  if (!(out.residual <= opt.tolerance))
    throw NumericalError("stationary solve residual " + std::to_string(out.residual) + " above tolerance");
  const double peak = *std::max_element(out.values.begin(), out.values.end());
  for (double& v : out.values) v /= peak;
  const double mass = out.mass();
  for (double& v : out.values) v /= mass;
  out.normalization = mass;
  return out;
}

inline GridDensity solve_stationary(const CoefficientModel& m, const Box& box, int cells_per_axis,
                                    const SolveOptions& opt = {}) {
  return solve_stationary(m, box, std::vector<int>(m.dim(), cells_per_axis), opt);
}

/// Cell averages (midpoint values) of an explicit density, normalized to unit
/// mass; `normalization` holds the mass before normalizing.
inline GridDensity density_from_expr(const Expr& rho, const Box& box, std::vector<int> cells) {
  GridDensity out;
  out.grid = CellGrid(box, std::move(cells));
  out.scheme = "explicit";
  std::vector<double> x(out.grid.dim());
  out.values.resize(out.grid.size());
  for (std::size_t c = 0; c < out.values.size(); ++c) {
    out.grid.center(c, x);
    const double v = rho.eval(x);
    if (!(v > 0.0)) throw DomainError("rho is not positive at a grid cell");
    out.values[c] = v;
  }
  const double mass = out.mass();
  for (double& v : out.values) v /= mass;
  out.normalization = mass;
  return out;
}

// ---------------------------------------------------------------------------
// beta^{A,rho} and the decomposition G = beta + B

/// beta_i = 1/2 sum_j (d_j a_ij + a_ij d_j rho / rho) for an explicit rho.
inline void beta_explicit(const CoefficientModel& m, const Expr& rho, std::span<const double> x,
                          std::span<double> out) {
  const int d = m.dim();
  std::array<double, kMaxDim> grad{}, divA{};
  std::array<double, kMaxDim * kMaxDim> A{};
  const double r = rho.gradient(x, std::span(grad.data(), d));
  if (!(r > 0.0)) throw DomainError("rho is not positive");
  m.diffusion(x, std::span(A.data(), d * d));
  if (!m.constant_diffusion()) m.diffusion_divergence(x, std::span(divA.data(), d));
  for (int i = 0; i < d; ++i) {
    double s = divA[i];
    for (int j = 0; j < d; ++j) s += A[i * d + j] * grad[j] / r;
    out[i] = 0.5 * s;
  }
}

inline VectorField beta_field(const CoefficientModel& m, const Expr& rho) {
  return [&m, rho](std::span<const double> x, std::span<double> out) { beta_explicit(m, rho, x, out); };
}

/// Vector field stored at cell centres, flat with stride d.
struct GridField {
  CellGrid grid;
  std::vector<double> data;

  double at(std::size_t cell, int i) const { return data[cell * grid.dim() + i]; }
  void eval(std::span<const double> x, std::span<double> out) const {
    const int d = grid.dim();
    for (int i = 0; i < d; ++i)
      out[i] = grid.interpolate_with([&](std::size_t c) { return data[c * d + i]; }, x);
  }
};

/// Grid beta: d_j log rho by centred differences, second-order one-sided at
/// the box faces; d_j a_ij by autodiff at the cell centres.
inline GridField beta_grid(const CoefficientModel& m, const GridDensity& rho) {
  const CellGrid& g = rho.grid;
  const int d = g.dim();
  if (d != m.dim()) throw ConfigError("density and model dimensions differ");
  for (double v : rho.values)
    if (!(v > 0.0)) throw DomainError("rho is not positive at a node");
  GridField out{g, std::vector<double>(g.size() * d)};
  std::vector<double> x(d), A(d * d), divA(d, 0.0), dlog(d);
  auto L = [&](std::size_t c) { return std::log(rho.values[c]); };
  for (std::size_t c = 0; c < g.size(); ++c) {
    for (int j = 0; j < d; ++j) {
      const int i = g.index(c, j), n = g.shape()[j];
      const std::size_t s = g.stride(j);
      const double h = g.h(j);
      if (i == 0)
        dlog[j] = (-3.0 * L(c) + 4.0 * L(c + s) - L(c + 2 * s)) / (2.0 * h);
      else if (i == n - 1)
        dlog[j] = (3.0 * L(c) - 4.0 * L(c - s) + L(c - 2 * s)) / (2.0 * h);
      else
        dlog[j] = (L(c + s) - L(c - s)) / (2.0 * h);
    }
    g.center(c, x);
    m.diffusion(x, A);
    if (!m.constant_diffusion()) m.diffusion_divergence(x, divA);
    for (int i = 0; i < d; ++i) {
      double s = divA[i];
      for (int j = 0; j < d; ++j) s += A[i * d + j] * dlog[j];
      out.data[c * d + i] = 0.5 * s;
    }
  }
  return out;
}

inline VectorField beta_field(const CoefficientModel& m, const GridDensity& rho) {
  auto field = std::make_shared<GridField>(beta_grid(m, rho));
  return [field](std::span<const double> x, std::span<double> out) { field->eval(x, out); };
}

struct DivfreeResidual {
  std::string test_id;
  double raw = 0.0;
  double normalized = 0.0;
};

struct DriftDecomposition {
  CellGrid grid;
  std::vector<double> beta;   // stride d
  std::vector<double> b;      // stride d
  std::vector<double> drift;  // G at the cell centres, stride d
  std::string rho_source;     // "grid" or "explicit"
  std::vector<DivfreeResidual> divfree;

  double max_norm_b() const { return max_norm(b); }
  double max_norm_drift() const { return max_norm(drift); }

  GridField b_field() const { return {grid, b}; }

 private:
  double max_norm(const std::vector<double>& v) const {
    const int d = grid.dim();
    double best = 0.0;
    for (std::size_t c = 0; c < grid.size(); ++c) {
      double s = 0.0;
      for (int i = 0; i < d; ++i) s += v[c * d + i] * v[c * d + i];
      best = std::max(best, std::sqrt(s));
    }
    return best;
  }
};

namespace detail {
inline DriftDecomposition decompose_with(const CoefficientModel& m, const CellGrid& g,
                                         const std::function<void(std::size_t, std::span<const double>, std::span<double>)>& beta) {
  const int d = g.dim();
  DriftDecomposition dec;
  dec.grid = g;
  dec.beta.resize(g.size() * d);
  dec.b.resize(g.size() * d);
  dec.drift.resize(g.size() * d);
  std::vector<double> x(d), G(d), bt(d);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center(c, x);
    m.drift(x, G);
    beta(c, x, bt);
    for (int i = 0; i < d; ++i) {
      dec.drift[c * d + i] = G[i];
      dec.beta[c * d + i] = bt[i];
      dec.b[c * d + i] = G[i] - bt[i];
    }
  }
  return dec;
}
}  // namespace detail

/// B = G - beta at the cell centres of a solved density.
inline DriftDecomposition decompose(const CoefficientModel& m, const GridDensity& rho) {
  const GridField beta = beta_grid(m, rho);
  const int d = m.dim();
  auto dec = detail::decompose_with(m, rho.grid, [&](std::size_t c, std::span<const double>, std::span<double> out) {
    for (int i = 0; i < d; ++i) out[i] = beta.at(c, i);
  });
  dec.rho_source = "grid";
  return dec;
}

/// B = G - beta at the cell centres of `grid` for an explicit rho.
inline DriftDecomposition decompose(const CoefficientModel& m, const Expr& rho, const CellGrid& grid) {
  auto dec = detail::decompose_with(m, grid, [&](std::size_t, std::span<const double> x, std::span<double> out) {
    beta_explicit(m, rho, x, out);
  });
  dec.rho_source = "explicit";
  return dec;
}

// ---------------------------------------------------------------------------
// Weak divergence-free test: integral of <B, grad f> rho over the box

/// prod_k max(0, 1 - ((x_k - c_k)/w)^2)^3.
struct Bump {
  std::vector<double> center;
  double width = 1.0;

  std::string id() const {
    std::string s = "bump(c=[";
    for (std::size_t k = 0; k < center.size(); ++k) s += (k ? "," : "") + detail::format_double(center[k]);
    return s + "],w=" + detail::format_double(width) + ")";
  }

  double value_and_gradient(std::span<const double> x, std::span<double> grad) const {
    const int d = static_cast<int>(center.size());
    std::array<double, kMaxDim> f{}, df{};
    double prod = 1.0;
    for (int k = 0; k < d; ++k) {
      const double t = (x[k] - center[k]) / width;
      const double q = 1.0 - t * t;
      if (q <= 0.0) {
        for (int j = 0; j < d; ++j) grad[j] = 0.0;
        return 0.0;
      }
      f[k] = q * q * q;
      df[k] = 3.0 * q * q * (-2.0 * t / width);
      prod *= f[k];
    }
    for (int j = 0; j < d; ++j) {
      double g = df[j];
      for (int k = 0; k < d; ++k)
        if (k != j) g *= f[k];
      grad[j] = g;
    }
    return prod;
  }

  /// Value, gradient and row-major Hessian.
  double value_gradient_hessian(std::span<const double> x, std::span<double> grad, std::span<double> hess) const {
    const int d = static_cast<int>(center.size());
    std::array<double, kMaxDim> f{}, df{}, ddf{};
    for (int k = 0; k < d; ++k) {
      const double t = (x[k] - center[k]) / width;
      const double q = 1.0 - t * t;
      if (q <= 0.0) {
        std::fill(grad.begin(), grad.begin() + d, 0.0);
        std::fill(hess.begin(), hess.begin() + d * d, 0.0);
        return 0.0;
      }
      f[k] = q * q * q;
      df[k] = -6.0 * t * q * q / width;
      ddf[k] = -6.0 * (q * q - 4.0 * t * t * q) / (width * width);
    }
    double prod = 1.0;
    for (int k = 0; k < d; ++k) prod *= f[k];
    for (int i = 0; i < d; ++i) {
      double g = df[i];
      for (int k = 0; k < d; ++k)
        if (k != i) g *= f[k];
      grad[i] = g;
      for (int j = i; j < d; ++j) {
        double h = (i == j) ? ddf[i] : df[i] * df[j];
        for (int k = 0; k < d; ++k)
          if (k != i && k != j) h *= f[k];
        hess[i * d + j] = h;
        hess[j * d + i] = h;
      }
    }
    return prod;
  }

  /// As an expression (for reports and the generator).
  std::string expression() const {
    std::string s;
    for (std::size_t k = 0; k < center.size(); ++k) {
      if (k) s += " * ";
      s += "max(0, 1 - ((x" + std::to_string(k + 1) + " - " + detail::format_double(center[k]) + ") / " +
           detail::format_double(width) + ")^2)^3";
    }
    return s;
  }
};

/// Lattice of bump centres with two widths, keeping supports strictly inside
/// the box.
inline std::vector<Bump> bump_battery(const Box& box, int per_axis = 3, std::vector<double> width_fractions = {0.15, 0.25}) {
  const int d = static_cast<int>(box.lower.size());
  double span = std::numeric_limits<double>::infinity();
  for (int k = 0; k < d; ++k) span = std::min(span, box.upper[k] - box.lower[k]);
  std::vector<Bump> out;
  for (double frac : width_fractions) {
    const double w = frac * span;
    std::vector<int> idx(d, 0);
    for (;;) {
      Bump b;
      b.width = w;
      bool inside = true;
      for (int k = 0; k < d; ++k) {
        const double lo = box.lower[k] + w, hi = box.upper[k] - w;
        const double c = per_axis == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * (idx[k] + 1) / (per_axis + 1);
        b.center.push_back(c);
        if (!(c - w > box.lower[k] && c + w < box.upper[k])) inside = false;
      }
      if (inside) out.push_back(std::move(b));
      int k = 0;
      while (k < d && ++idx[k] == per_axis) idx[k++] = 0;
      if (k == d) break;
    }
  }
  return out;
}

/// Midpoint quadrature of <B, grad f> rho. The normalized residual divides by
/// the integral of |B||grad f| rho, floored at 1e-8 times the same integral
/// with G in place of B so that a B at rounding level reads as zero.
inline std::vector<DivfreeResidual> divfree_residual(const DriftDecomposition& dec, const GridDensity& rho,
                                                     const std::vector<Bump>& battery) {
  const CellGrid& g = dec.grid;
  const int d = g.dim();
  if (rho.grid.size() != g.size()) throw ConfigError("density and decomposition grids differ");
  std::vector<DivfreeResidual> out;
  std::vector<double> x(d), grad(d);
  const double V = g.cell_volume();
  for (const auto& f : battery) {
    for (int k = 0; k < d; ++k)
      if (!(f.center[k] - f.width > g.box().lower[k] && f.center[k] + f.width < g.box().upper[k]))
        throw ConfigError("test function support touches the boundary: " + f.id());
    double raw = 0.0, scale_b = 0.0, scale_g = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
      g.center(c, x);
      if (f.value_and_gradient(x, grad) == 0.0) {
        bool zero = true;
        for (double v : grad) zero = zero && v == 0.0;
        if (zero) continue;
      }
      double bg = 0.0, nb = 0.0, ng = 0.0, gg = 0.0;
      for (int i = 0; i < d; ++i) {
        bg += dec.b[c * d + i] * grad[i];
        nb += dec.b[c * d + i] * dec.b[c * d + i];
        ng += dec.drift[c * d + i] * dec.drift[c * d + i];
        gg += grad[i] * grad[i];
      }
      const double w = rho.values[c] * V;
      raw += bg * w;
      scale_b += std::sqrt(nb * gg) * w;
      scale_g += std::sqrt(ng * gg) * w;
    }
    const double denom = std::max(scale_b, 1e-8 * scale_g);
    out.push_back({f.id(), raw, denom > 0.0 ? raw / denom : 0.0});
  }
  return out;
}

inline double max_normalized(const std::vector<DivfreeResidual>& r) {
  double m = 0.0;
  for (const auto& x : r) m = std::max(m, std::fabs(x.normalized));
  return m;
}

// ---------------------------------------------------------------------------
// Sampling from a grid density: cell by cumulative mass, then uniform in the cell

class DensitySampler {
 public:
  explicit DensitySampler(const GridDensity& rho) : rho_(&rho), cdf_(rho.values.size()) {
    std::partial_sum(rho.values.begin(), rho.values.end(), cdf_.begin());
    const double total = cdf_.back();
    for (double& v : cdf_) v /= total;
    cdf_.back() = 1.0;
  }

  /// `u` holds d+1 uniforms in [0,1).
  void sample(std::span<const double> u, std::span<double> x) const {
    const CellGrid& g = rho_->grid;
    const std::size_t cell =
        std::min<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u[0]) - cdf_.begin(), cdf_.size() - 1);
    for (int k = 0; k < g.dim(); ++k)
      x[k] = g.box().lower[k] + (g.index(cell, k) + u[k + 1]) * g.h(k);
  }

 private:
  const GridDensity* rho_;
  std::vector<double> cdf_;
};

// ---------------------------------------------------------------------------
// Serialization: JSON header plus CSV node values

inline std::string to_chars_string(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline nlohmann::json header_json(const GridDensity& rho) {
  nlohmann::json j;
  j["dim"] = rho.dim();
  j["box"] = {{"lower", rho.grid.box().lower}, {"upper", rho.grid.box().upper}};
  j["shape"] = rho.grid.shape();
  j["layout"] = "cell-centred, row-major, x1 slowest";
  j["mass"] = rho.mass();
  j["normalization"] = rho.normalization;
  j["residual"] = rho.residual;
  j["residual_history"] = rho.residual_history;
  j["scheme"] = rho.scheme;
  j["boundary"] = "zero flux on the truncated box";
  return j;
}

inline void write_density(const GridDensity& rho, const std::string& json_path, const std::string& csv_path) {
  std::ofstream hj(json_path);
  if (!hj) throw ConfigError("cannot write " + json_path);
  hj << header_json(rho).dump(2) << "\n";
  std::ofstream csv(csv_path);
  if (!csv) throw ConfigError("cannot write " + csv_path);
  const int d = rho.dim();
  for (int k = 0; k < d; ++k) csv << "x" << k + 1 << ",";
  csv << "rho\n";
  std::vector<double> x(d);
  for (std::size_t c = 0; c < rho.values.size(); ++c) {
    rho.grid.center(c, x);
    for (int k = 0; k < d; ++k) csv << to_chars_string(x[k]) << ",";
    csv << to_chars_string(rho.values[c]) << "\n";
  }
}

inline GridDensity read_density(const std::string& json_path, const std::string& csv_path) {
  std::ifstream hj(json_path);
  if (!hj) throw ConfigError("cannot read " + json_path);
  nlohmann::json j;
  try {
    hj >> j;
  } catch (const std::exception& e) {
    throw ConfigError(json_path + ": " + e.what());
  }
  GridDensity rho;
  rho.grid = CellGrid(Box{j["box"]["lower"].get<std::vector<double>>(), j["box"]["upper"].get<std::vector<double>>()},
                      j["shape"].get<std::vector<int>>());
  rho.normalization = j.value("normalization", 1.0);
  rho.residual = j.value("residual", 0.0);
  rho.scheme = j.value("scheme", std::string("unknown"));
  std::ifstream csv(csv_path);
  if (!csv) throw ConfigError("cannot read " + csv_path);
  std::string line;
  std::getline(csv, line);  // header
  const int d = rho.dim();
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto pos = line.rfind(',');
    if (pos == std::string::npos && d > 0) throw ConfigError(csv_path + ": malformed row");
    const std::string last = line.substr(pos + 1);
    double v = 0.0;
    auto r = std::from_chars(last.data(), last.data() + last.size(), v);
    if (r.ec != std::errc()) throw ConfigError(csv_path + ": bad number '" + last + "'");
    rho.values.push_back(v);
  }
  if (rho.values.size() != rho.grid.size()) throw ConfigError(csv_path + ": wrong number of rows");
  return rho;
}

inline nlohmann::json to_json(const DriftDecomposition& dec) {
  nlohmann::json j;
  j["rho_source"] = dec.rho_source;
  j["shape"] = dec.grid.shape();
  j["max_norm_B"] = dec.max_norm_b();
  j["max_norm_G"] = dec.max_norm_drift();
  auto& r = j["divfree_residuals"] = nlohmann::json::array();
  for (const auto& x : dec.divfree) r.push_back({{"test", x.test_id}, {"raw", x.raw}, {"normalized", x.normalized}});
  j["max_normalized_residual"] = max_normalized(dec.divfree);
  return j;
}

}  // namespace sdelab
