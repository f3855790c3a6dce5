#pragma once

// Small dense symmetric linear algebra: cyclic Jacobi eigendecomposition and
// the symmetric positive-definite square root. Matrices are row-major spans
// of n*n doubles with n <= kMaxDim.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "sdelab/errors.hpp"
#include "sdelab/expr.hpp"

namespace sdelab {

/// Eigenvalues (ascending) and column eigenvectors of a symmetric matrix.
struct SymmetricEigen {
  int n = 0;
  std::array<double, kMaxDim> values{};
  std::array<double, kMaxDim * kMaxDim> vectors{};  // column k = vector k

  double vector(int row, int k) const { return vectors[row * n + k]; }
};

/// Cyclic Jacobi sweeps until the off-diagonal mass is below rounding.
inline SymmetricEigen jacobi_eigen(std::span<const double> a, int n) {
  if (n < 1 || n > kMaxDim || static_cast<int>(a.size()) < n * n)
    throw ConfigError("jacobi_eigen: bad matrix size");
  std::array<double, kMaxDim * kMaxDim> m{};
  SymmetricEigen out;
  out.n = n;
  double scale = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      // symmetrize: the upper triangle is authoritative
      m[i * n + j] = i <= j ? a[i * n + j] : a[j * n + i];
      out.vectors[i * n + j] = i == j ? 1.0 : 0.0;
      scale += m[i * n + j] * m[i * n + j];
    }
  scale = std::sqrt(scale);
  const double tol = 1e-30 * scale * scale;

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += m[i * n + j] * m[i * n + j];
    if (off <= tol) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = m[p * n + q];
        if (apq == 0.0) continue;
        const double app = m[p * n + p], aqq = m[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double mkp = m[k * n + p], mkq = m[k * n + q];
          m[k * n + p] = c * mkp - s * mkq;
          m[k * n + q] = s * mkp + c * mkq;
        }
        for (int k = 0; k < n; ++k) {
          const double mpk = m[p * n + k], mqk = m[q * n + k];
          m[p * n + k] = c * mpk - s * mqk;
          m[q * n + k] = s * mpk + c * mqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = out.vectors[k * n + p], vkq = out.vectors[k * n + q];
          out.vectors[k * n + p] = c * vkp - s * vkq;
          out.vectors[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::array<int, kMaxDim> order{};
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.begin() + n,
            [&](int x, int y) { return m[x * n + x] < m[y * n + y]; });
  std::array<double, kMaxDim * kMaxDim> sorted{};
  for (int k = 0; k < n; ++k) {
    out.values[k] = m[order[k] * n + order[k]];
    for (int i = 0; i < n; ++i) sorted[i * n + k] = out.vectors[i * n + order[k]];
  }
  out.vectors = sorted;
  return out;
}

inline constexpr double kPositiveDefiniteTolerance = 1e-12;

/// Unique symmetric positive-definite square root via A = Q diag(l) Q^T.
/// Throws NumericalError when the smallest eigenvalue is <= 1e-12.
inline void spd_sqrt(std::span<const double> a, int n, std::span<double> out) {
  const SymmetricEigen eig = jacobi_eigen(a, n);
  if (!(eig.values[0] > kPositiveDefiniteTolerance))
    throw NumericalError("matrix is not positive definite (min eigenvalue " +
                         std::to_string(eig.values[0]) + ")");
  std::array<double, kMaxDim> root{};
  for (int k = 0; k < n; ++k) root[k] = std::sqrt(eig.values[k]);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += eig.vector(i, k) * root[k] * eig.vector(j, k);
      out[i * n + j] = acc;
      out[j * n + i] = acc;
    }
}

inline double frobenius(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

}  // namespace sdelab
