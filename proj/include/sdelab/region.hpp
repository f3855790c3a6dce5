#pragma once

// Bounded sampling regions (ball, box, annulus about the origin) and the
// deterministic point sets used by every a.e.-inequality checker: a tensor or
// polar grid plus Halton jitter points.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdelab/errors.hpp"
#include "sdelab/expr.hpp"
#include "sdelab/quadrature.hpp"

namespace sdelab {

/// Flat list of points in R^d.
class PointSet {
 public:
  explicit PointSet(int dim) : dim_(dim) {}

  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return coords_.size() / dim_; }
  std::span<const double> operator[](std::size_t i) const {
    return {coords_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }
  void push(std::span<const double> x) { coords_.insert(coords_.end(), x.begin(), x.end()); }

 private:
  int dim_;
  std::vector<double> coords_;
};

struct Ball {
  std::vector<double> center;
  double radius = 1.0;
};

struct Box {
  std::vector<double> lower;
  std::vector<double> upper;
};

/// { inner <= ||x|| <= outer }.
struct Annulus {
  double inner = 0.0;
  double outer = 1.0;
};

struct Region {
  std::variant<Ball, Box, Annulus> shape;
  int resolution = 41;   // points per axis, or radial count for an annulus
  int angular = 0;       // annulus directions; 0 picks 4 * resolution
  int jitter = -1;       // Halton points; -1 picks a quarter of the grid size
  std::uint64_t seed = 0;  // Halton start index

  static Region ball(std::vector<double> center, double radius, int resolution = 41) {
    return Region{Ball{std::move(center), radius}, resolution};
  }
  static Region centered_ball(int dim, double radius, int resolution = 41) {
    return ball(std::vector<double>(dim, 0.0), radius, resolution);
  }
  static Region box(std::vector<double> lower, std::vector<double> upper, int resolution = 41) {
    return Region{Box{std::move(lower), std::move(upper)}, resolution};
  }
  static Region annulus(double inner, double outer, int resolution = 41) {
    return Region{Annulus{inner, outer}, resolution};
  }

  /// Same region with the grid refined 2x; the old grid nodes are kept.
  Region refined() const {
    Region r = *this;
    r.resolution = 2 * resolution - 1;
    if (angular > 0) r.angular = 2 * angular;
    return r;
  }
};

inline void validate(const Region& r, int dim) {
  if (r.resolution < 2) throw ConfigError("region resolution must be at least 2");
  if (const auto* b = std::get_if<Ball>(&r.shape)) {
    if (static_cast<int>(b->center.size()) != dim)
      throw ConfigError("ball center has the wrong dimension");
    if (!(b->radius > 0.0)) throw ConfigError("ball radius must be positive");
  } else if (const auto* x = std::get_if<Box>(&r.shape)) {
    if (static_cast<int>(x->lower.size()) != dim || static_cast<int>(x->upper.size()) != dim)
      throw ConfigError("box corners have the wrong dimension");
    for (int i = 0; i < dim; ++i)
      if (!(x->lower[i] < x->upper[i])) throw ConfigError("box corners are not ordered");
  } else {
    const auto& a = std::get<Annulus>(r.shape);
    if (!(a.inner > 0.0) || !(a.outer > a.inner))
      throw ConfigError("annulus radii must satisfy 0 < inner < outer");
  }
}

inline bool contains(const Region& r, std::span<const double> x, double slack = 1e-12) {
  if (const auto* b = std::get_if<Ball>(&r.shape)) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - b->center[i]) * (x[i] - b->center[i]);
    return std::sqrt(s) <= b->radius * (1.0 + slack);
  }
  if (const auto* bx = std::get_if<Box>(&r.shape)) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w = (bx->upper[i] - bx->lower[i]) * slack;
      if (x[i] < bx->lower[i] - w || x[i] > bx->upper[i] + w) return false;
    }
    return true;
  }
  const auto& a = std::get<Annulus>(r.shape);
  double s = 0.0;
  for (double v : x) s += v * v;
  s = std::sqrt(s);
  return s >= a.inner * (1.0 - slack) && s <= a.outer * (1.0 + slack);
}

inline Box bounding_box(const Region& r, int dim) {
  if (const auto* b = std::get_if<Ball>(&r.shape)) {
    Box out{b->center, b->center};
    for (int i = 0; i < dim; ++i) {
      out.lower[i] -= b->radius;
      out.upper[i] += b->radius;
    }
    return out;
  }
  if (const auto* bx = std::get_if<Box>(&r.shape)) return *bx;
  const double R = std::get<Annulus>(r.shape).outer;
  return Box{std::vector<double>(dim, -R), std::vector<double>(dim, R)};
}

/// Radical inverse of `index` in base `base`.
inline double radical_inverse(std::uint64_t index, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

inline unsigned nth_prime(int k) {
  static constexpr unsigned primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  return primes[k];
}

namespace detail {

inline void tensor_grid(const Box& box, int n, const Region& r, PointSet& out) {
  const int d = static_cast<int>(box.lower.size());
  std::vector<int> idx(d, 0);
  std::vector<double> x(d);
  for (;;) {
    for (int i = 0; i < d; ++i)
      x[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * idx[i] / (n - 1);
    if (contains(r, x)) out.push(x);
    int k = 0;
    while (k < d && ++idx[k] == n) idx[k++] = 0;
    if (k == d) break;
  }
}

inline void annulus_grid(const Annulus& a, int dim, const Region& r, PointSet& out) {
  const int n_r = r.resolution;
  std::vector<double> dirs;
  if (dim == 1) {
    dirs = {-1.0, 1.0};
  } else if (dim == 2) {
    const int n_a = r.angular > 0 ? r.angular : 4 * r.resolution;
    for (int k = 0; k < n_a; ++k) {
      const double th = 2.0 * quad::kPi * k / n_a;
      dirs.push_back(std::cos(th));
      dirs.push_back(std::sin(th));
    }
  } else {
    const auto s = quad::sphere_rule(dim, r.angular > 0 ? r.angular : 8);
    dirs = s.directions;
    for (int k = 0; k < dim; ++k)
      for (double sign : {-1.0, 1.0})
        for (int j = 0; j < dim; ++j) dirs.push_back(j == k ? sign : 0.0);
  }
  std::vector<double> x(dim);
  const std::size_t n_dirs = dirs.size() / dim;
  for (int i = 0; i < n_r; ++i) {
    const double rad = a.inner + (a.outer - a.inner) * i / (n_r - 1);
    for (std::size_t k = 0; k < n_dirs; ++k) {
      for (int j = 0; j < dim; ++j) x[j] = rad * dirs[k * dim + j];
      out.push(x);
    }
  }
}

}  // namespace detail

/// Deterministic sample of the region: grid nodes (including the boundary)
/// followed by Halton jitter points that fall inside the region.
inline PointSet sample(const Region& r, int dim) {
  validate(r, dim);
  PointSet out(dim);
  if (const auto* a = std::get_if<Annulus>(&r.shape))
    detail::annulus_grid(*a, dim, r, out);
  else
    detail::tensor_grid(bounding_box(r, dim), r.resolution, r, out);

  const std::size_t n_jitter =
      r.jitter >= 0 ? static_cast<std::size_t>(r.jitter) : std::max<std::size_t>(8, out.size() / 4);
  const Box bb = bounding_box(r, dim);
  std::vector<double> x(dim);
  std::size_t accepted = 0;
  for (std::uint64_t k = r.seed + 1; accepted < n_jitter && k < r.seed + 1 + 64 * (n_jitter + 1); ++k) {
    for (int i = 0; i < dim; ++i)
      x[i] = bb.lower[i] + (bb.upper[i] - bb.lower[i]) * radical_inverse(k, nth_prime(i));
    if (contains(r, x, 0.0)) {
      out.push(x);
      ++accepted;
    }
  }
  return out;
}

inline nlohmann::json to_json(const Region& r) {
  nlohmann::json j;
  if (const auto* b = std::get_if<Ball>(&r.shape)) {
    j["kind"] = "ball";
    j["center"] = b->center;
    j["radius"] = b->radius;
  } else if (const auto* x = std::get_if<Box>(&r.shape)) {
    j["kind"] = "box";
    j["lower"] = x->lower;
    j["upper"] = x->upper;
  } else {
    const auto& a = std::get<Annulus>(r.shape);
    j["kind"] = "annulus";
    j["inner"] = a.inner;
    j["outer"] = a.outer;
  }
  j["resolution"] = r.resolution;
  if (r.angular > 0) j["angular"] = r.angular;
  j["jitter"] = r.jitter;
  j["seed"] = r.seed;
  return j;
}

/// Largest radius of the region measured from the origin.
inline double outer_radius(const Region& r) {
  if (const auto* b = std::get_if<Ball>(&r.shape)) {
    double s = 0.0;
    for (double c : b->center) s += c * c;
    return std::sqrt(s) + b->radius;
  }
  if (const auto* x = std::get_if<Box>(&r.shape)) {
    double s = 0.0;
    for (std::size_t i = 0; i < x->lower.size(); ++i) {
      const double m = std::max(std::fabs(x->lower[i]), std::fabs(x->upper[i]));
      s += m * m;
    }
    return std::sqrt(s);
  }
  return std::get<Annulus>(r.shape).outer;
}

/// Same shape scaled about the origin (used to probe growth at infinity).
inline Region scaled(const Region& r, double factor) {
  Region out = r;
  if (auto* b = std::get_if<Ball>(&out.shape)) {
    for (double& c : b->center) c *= factor;
    b->radius *= factor;
  } else if (auto* x = std::get_if<Box>(&out.shape)) {
    for (double& v : x->lower) v *= factor;
    for (double& v : x->upper) v *= factor;
  } else {
    auto& a = std::get<Annulus>(out.shape);
    a.outer *= factor;
  }
  return out;
}

}  // namespace sdelab
