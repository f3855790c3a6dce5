#pragma once

// Forward-mode dual numbers. Dual<Dual<double>> carries a mixed second
// derivative; nesting is the only mechanism for higher orders.
//
// Chain-rule convention: when the tangent of an argument is exactly zero the
// tangent of the result is zero, even if the outer derivative is infinite.
// This makes ||x||^3 = (x.x)^1.5 twice differentiable at the origin.

#include <cmath>
#include <type_traits>

#include "sdelab/errors.hpp"

namespace sdelab {

template <class T>
struct Dual {
  T v{};
  T d{};

  constexpr Dual() = default;
  constexpr Dual(const T& value) : v(value) {}  // NOLINT: implicit lift
  constexpr Dual(const T& value, const T& tangent) : v(value), d(tangent) {}
};

template <class T>
struct is_dual : std::false_type {};
template <class T>
struct is_dual<Dual<T>> : std::true_type {};

inline double primal(double x) { return x; }
template <class T>
double primal(const Dual<T>& x) {
  return primal(x.v);
}

inline bool is_zero(double x) { return x == 0.0; }
template <class T>
bool is_zero(const Dual<T>& x) {
  return is_zero(x.v) && is_zero(x.d);
}

inline bool all_finite(double x) { return std::isfinite(x); }
template <class T>
bool all_finite(const Dual<T>& x) {
  return all_finite(x.v) && all_finite(x.d);
}

template <class T>
Dual<T> operator-(const Dual<T>& a) {
  return {-a.v, -a.d};
}
template <class T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) {
  return {a.v + b.v, a.d + b.d};
}
template <class T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) {
  return {a.v - b.v, a.d - b.d};
}
template <class T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  return {a.v * b.v, a.v * b.d + a.d * b.v};
}
template <class T>
Dual<T> operator*(double s, const Dual<T>& a) {
  return {s * a.v, s * a.d};
}
template <class T>
Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  if (primal(b) == 0.0) throw DomainError("division by zero");
  const T q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}

// Scalar kernels. Each checks its own domain on the primal value.

inline double safe_div(double a, double b) {
  if (b == 0.0) throw DomainError("division by zero");
  return a / b;
}
inline double safe_log(double a) {
  if (!(a > 0.0)) throw DomainError("logarithm of a non-positive number");
  return std::log(a);
}
inline double safe_sqrt(double a) {
  if (a < 0.0) throw DomainError("square root of a negative number");
  return std::sqrt(a);
}

inline bool is_integral(double c) {
  return c == std::floor(c) && std::fabs(c) < 2147483648.0;
}

inline double pow_const(double a, double c) {
  if (a < 0.0 && !is_integral(c))
    throw DomainError("fractional power of a negative number");
  if (a == 0.0 && c < 0.0) throw DomainError("negative power of zero");
  if (c == 2.0) return a * a;
  if (c == 1.0) return a;
  return std::pow(a, c);
}

inline double exp(double a) { return std::exp(a); }
inline double log(double a) { return safe_log(a); }
inline double sqrt(double a) { return safe_sqrt(a); }
inline double sin(double a) { return std::sin(a); }
inline double cos(double a) { return std::cos(a); }
// Right derivative at the kink: sign(0) = +1.
inline double abs(double a) { return a < 0.0 ? -a : a; }

template <class T>
Dual<T> exp(const Dual<T>& a) {
  const T e = exp(a.v);
  if (is_zero(a.d)) return {e, T{}};
  return {e, e * a.d};
}
template <class T>
Dual<T> log(const Dual<T>& a) {
  const T l = log(a.v);
  if (is_zero(a.d)) return {l, T{}};
  return {l, a.d / a.v};
}
template <class T>
Dual<T> sqrt(const Dual<T>& a) {
  const T s = sqrt(a.v);
  if (is_zero(a.d)) return {s, T{}};
  return {s, a.d / (2.0 * s)};
}
template <class T>
Dual<T> sin(const Dual<T>& a) {
  if (is_zero(a.d)) return {sin(a.v), T{}};
  return {sin(a.v), cos(a.v) * a.d};
}
template <class T>
Dual<T> cos(const Dual<T>& a) {
  if (is_zero(a.d)) return {cos(a.v), T{}};
  return {cos(a.v), -(sin(a.v) * a.d)};
}
template <class T>
Dual<T> abs(const Dual<T>& a) {
  return primal(a) < 0.0 ? -a : a;
}
template <class T>
Dual<T> pow_const(const Dual<T>& a, double c) {
  const T p = pow_const(a.v, c);
  if (is_zero(a.d) || c == 0.0) return {p, T{}};
  return {p, c * (pow_const(a.v, c - 1.0) * a.d)};
}

inline double pow(double a, double b) {
  if (a > 0.0) return std::exp(b * std::log(a));
  if (a == 0.0 && b > 0.0) return 0.0;
  throw DomainError("variable exponent requires a positive base");
}
template <class T>
Dual<T> pow(const Dual<T>& a, const Dual<T>& b) {
  if (!(primal(a) > 0.0))
    throw DomainError("variable exponent requires a positive base");
  return exp(b * log(a));
}

}  // namespace sdelab
