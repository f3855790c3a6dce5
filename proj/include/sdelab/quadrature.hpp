#pragma once

// Quadrature building blocks: Gauss-Legendre rules on intervals and product
// rules on the unit sphere S^{d-1} in hyperspherical coordinates.

#include <boost/math/constants/constants.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <algorithm>
#include <cmath>
#include <vector>

#include "sdelab/errors.hpp"
#include "sdelab/linalg.hpp"

namespace sdelab::quad {

inline constexpr double kPi = boost::math::constants::pi<double>();

struct Rule1D {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;  // sum to 2
};

namespace detail {
template <unsigned N>
Rule1D expand_gauss() {
  using G = boost::math::quadrature::gauss<double, N>;
  const auto& x = G::abscissa();
  const auto& w = G::weights();
  Rule1D r;
  for (std::size_t i = x.size(); i-- > 0;) {
    if (x[i] == 0.0) continue;
    r.nodes.push_back(-x[i]);
    r.weights.push_back(w[i]);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.nodes.push_back(x[i]);
    r.weights.push_back(w[i]);
  }
  return r;
}
}  // namespace detail

/// Gauss-Legendre rule with n in {4, 8, 16, 32} points.
inline const Rule1D& gauss_legendre(int n) {
  static const Rule1D r4 = detail::expand_gauss<4>();
  static const Rule1D r8 = detail::expand_gauss<8>();
  static const Rule1D r16 = detail::expand_gauss<16>();
  static const Rule1D r32 = detail::expand_gauss<32>();
  switch (n) {
    case 4: return r4;
    case 8: return r8;
    case 16: return r16;
    case 32: return r32;
    default: throw ConfigError("unsupported Gauss-Legendre order " + std::to_string(n));
  }
}

/// Gauss rule for the weight (1-u^2)^a on [-1, 1], a > -1, by Golub-Welsch.
inline Rule1D gauss_gegenbauer(int n, double a) {
  if (n < 1 || n > kMaxDim) throw ConfigError("unsupported Gauss-Gegenbauer order");
  std::vector<double> jm(static_cast<std::size_t>(n) * n, 0.0);
  for (int k = 1; k < n; ++k) {
    const double s = 2.0 * k + 2.0 * a;
    const double b = 4.0 * k * (k + a) * (k + a) * (k + 2.0 * a) / (s * s * (s + 1.0) * (s - 1.0));
    jm[(k - 1) * n + k] = jm[k * n + k - 1] = std::sqrt(b);
  }
  const SymmetricEigen eig = jacobi_eigen(jm, n);
  const double mu0 = std::sqrt(kPi) * std::tgamma(a + 1.0) / std::tgamma(a + 1.5);
  Rule1D r;
  for (int k = 0; k < n; ++k) {
    r.nodes.push_back(eig.values[k]);
    r.weights.push_back(mu0 * eig.vector(0, k) * eig.vector(0, k));
  }
  return r;
}

/// Directions on S^{d-1} with weights summing to the sphere's surface area.
struct SphereRule {
  int dim = 0;
  std::vector<double> directions;  // flat, stride dim
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  const double* direction(std::size_t k) const { return directions.data() + k * dim; }
};

/// `resolution` controls the number of nodes per angle: uniform azimuth with
/// 4*resolution points, Gauss rules in u = cos(phi) with `resolution` points (rounded to a
/// supported order) in every polar angle.
inline SphereRule sphere_rule(int dim, int resolution = 16) {
  SphereRule s;
  s.dim = dim;
  if (dim < 1) throw ConfigError("sphere_rule: dimension must be positive");
  if (dim == 1) {
    s.directions = {-1.0, 1.0};
    s.weights = {1.0, 1.0};
    return s;
  }
  const int n_azimuth = 4 * resolution;
  if (dim == 2) {
    for (int k = 0; k < n_azimuth; ++k) {
      const double th = 2.0 * kPi * k / n_azimuth;
      s.directions.push_back(std::cos(th));
      s.directions.push_back(std::sin(th));
      s.weights.push_back(2.0 * kPi / n_azimuth);
    }
    return s;
  }
  const int order = resolution <= 4 ? 4 : resolution <= 8 ? 8 : resolution <= 16 ? 16 : 32;
  // u = cos(phi) turns the sin^{d-2} weight into (1-u^2)^{(d-3)/2}
  const Rule1D polar = dim == 3 ? gauss_legendre(order) : gauss_gegenbauer(std::min(order, 16), 0.5 * (dim - 3));
  const SphereRule inner = sphere_rule(dim - 1, resolution);
  for (std::size_t q = 0; q < polar.nodes.size(); ++q) {
    const double c = polar.nodes[q];
    const double sn = std::sqrt(std::max(0.0, 1.0 - c * c));
    for (std::size_t k = 0; k < inner.size(); ++k) {
      s.directions.push_back(c);
      const double* d = inner.direction(k);
      for (int j = 0; j < dim - 1; ++j) s.directions.push_back(sn * d[j]);
      s.weights.push_back(polar.weights[q] * inner.weights[k]);
    }
  }
  return s;
}

/// Surface area of the unit sphere S^{d-1}.
inline double sphere_area(int dim) {
  return 2.0 * std::pow(kPi, 0.5 * dim) / std::tgamma(0.5 * dim);
}

}  // namespace sdelab::quad
