#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sdelab/density.hpp"

using namespace sdelab;

namespace {

Box square(double a) { return Box{{-a, -a}, {a, a}}; }

CoefficientModel model2(std::vector<std::vector<std::string>> A, std::vector<std::string> G) {
  return CoefficientModel::from_strings(2, 3.0, std::move(A), std::move(G));
}

const CoefficientModel& ou() {
  static const auto m = model2({{"1", "0"}, {"0", "1"}}, {"-x1", "-x2"});
  return m;
}

// max relative error of a grid density against c * f at the cell centres,
// with f normalized by its exact integral Z over the box
template <class F>
double max_rel_error(const GridDensity& rho, F&& f, double Z) {
  std::vector<double> x(rho.dim());
  double worst = 0.0;
  for (std::size_t c = 0; c < rho.values.size(); ++c) {
    rho.grid.center(c, x);
    const double exact = f(x) / Z;
    worst = std::max(worst, std::fabs(rho.values[c] - exact) / exact);
  }
  return worst;
}

double gauss_box_integral(double a, double scale) {
  // integral over [-a,a] of exp(-x^2/scale)
  return std::sqrt(quad::kPi * scale) * std::erf(a / std::sqrt(scale));
}

}  // namespace

TEST(Grid, InterpolationIsExactForLinearData) {
  CellGrid g(square(1.0), {10, 8});
  std::vector<double> v(g.size()), x(2);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center(c, x);
    v[c] = 2.0 * x[0] - 3.0 * x[1] + 1.0;
  }
  const std::vector<double> p{0.123, -0.456};
  EXPECT_NEAR(g.interpolate(v, p), 2.0 * 0.123 + 3.0 * 0.456 + 1.0, 1e-13);
  EXPECT_THROW(g.interpolate(v, std::vector<double>{1.5, 0.0}), ConfigError);
}

TEST(Solve, AdjointConservesMass) {
  const auto m = model2({{"1 + 0.3*sin(x1)", "0.2"}, {"0.2", "1"}}, {"-x1^3 + x2", "-x2"});
  const CellGrid g(square(2.0), {12, 9});
  for (auto s : {detail::FluxScheme::fitted, detail::FluxScheme::monotone}) {
    const auto M = detail::assemble_adjoint(m, g, s);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(M.rows());
    const Eigen::VectorXd colsum = M.transpose() * ones;
    EXPECT_LT(colsum.cwiseAbs().maxCoeff(), 1e-10 * detail::inf_norm(M));
  }
}

TEST(Solve, OrnsteinUhlenbeck) {
  const auto rho = solve_stationary(ou(), square(4.0), 161);
  EXPECT_NEAR(rho.mass(), 1.0, 1e-12);
  EXPECT_LE(rho.residual, 1e-8);
  EXPECT_EQ(rho.scheme, "exponential-fitting");
  const double Z = std::pow(gauss_box_integral(4.0, 1.0), 2);
  const double err = max_rel_error(rho, [](auto x) { return std::exp(-(x[0] * x[0] + x[1] * x[1])); }, Z);
  EXPECT_LE(err, 0.02);
  for (double v : rho.values) EXPECT_GT(v, 0.0);
}

TEST(Solve, BrownianMotionIsUniform) {
  const auto m = model2({{"1", "0"}, {"0", "1"}}, {"0", "0"});
  const auto rho = solve_stationary(m, Box{{-1, -2}, {3, 1}}, std::vector<int>{20, 15});
  const double u = 1.0 / 12.0;
  for (double v : rho.values) EXPECT_NEAR(v, u, 1e-10);
}

TEST(Solve, ScaledDiffusion) {
  const auto m = model2({{"2", "0"}, {"0", "2"}}, {"-x1", "-x2"});
  const auto rho = solve_stationary(m, square(4.0), 161);
  const double Z = std::pow(gauss_box_integral(4.0, 2.0), 2);
  EXPECT_LE(max_rel_error(rho, [](auto x) { return std::exp(-(x[0] * x[0] + x[1] * x[1]) / 2.0); }, Z), 0.02);
}

TEST(Solve, CrossDiffusion) {
  // A constant, G = -x: covariance A/2, rho ~ exp(-x^T A^{-1} x)
  const auto m = model2({{"1", "0.5"}, {"0.5", "1"}}, {"-x1", "-x2"});
  auto f = [](auto x) {
    const double det = 0.75;
    return std::exp(-(x[0] * x[0] - x[0] * x[1] + x[1] * x[1]) / det);
  };
  SolveOptions strict;
  strict.allow_fallback = false;
  // centred cross differences undershoot in the far tails
  EXPECT_THROW(solve_stationary(m, square(4.0), 121, strict), NumericalError);
  const auto rho = solve_stationary(m, square(4.0), 121);
  EXPECT_EQ(rho.scheme, "monotone-cross-fallback");
  std::vector<double> x(2);
  double Zh = 0.0;
  for (std::size_t c = 0; c < rho.values.size(); ++c) {
    rho.grid.center(c, x);
    Zh += f(x) * rho.grid.cell_volume();
  }
  // compare on the region where the density is not negligible
  double worst = 0.0;
  for (std::size_t c = 0; c < rho.values.size(); ++c) {
    rho.grid.center(c, x);
    if (f(x) < 1e-3) continue;
    worst = std::max(worst, std::fabs(rho.values[c] * Zh / f(x) - 1.0));
  }
  // first order in the cross terms
  EXPECT_LE(worst, 0.05);

  for (double v : rho.values) EXPECT_GT(v, 0.0);
}

TEST(Solve, ForcedFallbackOnOu) {
  SolveOptions opt;
  opt.force_fallback = true;
  const auto rho = solve_stationary(ou(), square(4.0), 81, opt);
  EXPECT_EQ(rho.scheme, "monotone-cross-fallback");
  const double Z = std::pow(gauss_box_integral(4.0, 1.0), 2);
  EXPECT_LE(max_rel_error(rho, [](auto x) { return std::exp(-(x[0] * x[0] + x[1] * x[1])); }, Z), 0.02);
}

TEST(Solve, SecondOrderOnQuarticPotential) {
  // G = -(x1^3, x2^3): rho ~ exp(-(x1^4 + x2^4)/2); exponential fitting is not exact here
  const auto m = model2({{"1", "0"}, {"0", "1"}}, {"-x1^3", "-x2^3"});
  auto f = [](auto x) { return std::exp(-0.5 * (std::pow(x[0], 4) + std::pow(x[1], 4))); };
  const auto& gl = quad::gauss_legendre(32);
  double z1 = 0.0;  // 1-d integral over [-2.5, 2.5], composite Gauss-Legendre
  for (int piece = 0; piece < 50; ++piece) {
    const double a = -2.5 + 0.1 * piece;
    for (std::size_t q = 0; q < gl.nodes.size(); ++q) {
      const double t = a + 0.05 * (gl.nodes[q] + 1.0);
      z1 += 0.05 * gl.weights[q] * std::exp(-0.5 * std::pow(t, 4));
    }
  }
  const double Z = z1 * z1;
  const double e1 = max_rel_error(solve_stationary(m, square(2.5), 41), f, Z);
  const double e2 = max_rel_error(solve_stationary(m, square(2.5), 81), f, Z);
  const double order = std::log2(e1 / e2);
  EXPECT_GE(order, 1.8) << e1 << " " << e2;
}

TEST(Solve, Preconditions) {
  const auto deg = model2({{"x1^2", "0"}, {"0", "1"}}, {"0", "0"});
  EXPECT_THROW(solve_stationary(deg, square(1.0), 10), ConfigError);
  EXPECT_THROW(solve_stationary(ou(), Box{{1, 1}, {2, 2}}, 10), ConfigError);
}

TEST(Beta, Explicit) {
  std::vector<double> out(2);
  const auto rho = Expr::parse("exp(-norm2(x)^2)", 2);
  beta_explicit(ou(), rho, std::vector<double>{0.3, -1.1}, out);
  EXPECT_NEAR(out[0], -0.3, 1e-15);
  EXPECT_NEAR(out[1], 1.1, 1e-15);
  beta_explicit(ou(), Expr::parse("1", 2), std::vector<double>{0.3, -1.1}, out);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 0.0);
  const auto var = model2({{"1 + x1^2", "0"}, {"0", "1"}}, {"0", "0"});
  beta_explicit(var, Expr::parse("1", 2), std::vector<double>{0.7, 2.0}, out);
  EXPECT_NEAR(out[0], 0.7, 1e-15);
  EXPECT_EQ(out[1], 0.0);
}

TEST(Beta, GridAgreesWithExplicit) {
  const auto rho = solve_stationary(ou(), square(4.0), 81);
  const auto grid_beta = beta_grid(ou(), rho);
  const auto exact = Expr::parse("exp(-norm2(x)^2)", 2);
  std::vector<double> x(2), b(2);
  double worst = 0.0, scale = 0.0;
  for (std::size_t c = 0; c < rho.values.size(); ++c) {
    rho.grid.center(c, x);
    if (std::fabs(x[0]) > 2.0 || std::fabs(x[1]) > 2.0) continue;
    beta_explicit(ou(), exact, x, b);
    for (int i = 0; i < 2; ++i) {
      worst = std::max(worst, std::fabs(grid_beta.at(c, i) - b[i]));
      scale = std::max(scale, std::fabs(b[i]));
    }
  }
  EXPECT_LE(worst, 0.03 * scale);
}

TEST(Decompose, ExplicitExamples) {
  const CellGrid g(square(3.0), {40, 40});
  const auto d1 = decompose(ou(), Expr::parse("exp(-norm2(x)^2)", 2), g);
  EXPECT_LE(d1.max_norm_b(), 1e-10);
  for (std::size_t k = 0; k < d1.b.size(); ++k) EXPECT_NEAR(d1.beta[k] + d1.b[k], d1.drift[k], 1e-10);

  const auto rot = model2({{"1", "0"}, {"0", "1"}},
                          {"-x1 - x2 * exp(-norm2(x)^2)", "-x2 + x1 * exp(-norm2(x)^2)"});
  const auto d2 = decompose(rot, Expr::parse("exp(-norm2(x)^2)", 2), g);
  std::vector<double> x(2);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center(c, x);
    const double e = std::exp(-(x[0] * x[0] + x[1] * x[1]));
    EXPECT_NEAR(d2.b[2 * c], -x[1] * e, 1e-12);
    EXPECT_NEAR(d2.b[2 * c + 1], x[0] * e, 1e-12);
  }
  const auto bm = model2({{"1", "0"}, {"0", "1"}}, {"0", "0"});
  EXPECT_EQ(decompose(bm, Expr::parse("1", 2), g).max_norm_b(), 0.0);
}

TEST(Divfree, Residuals) {
  const Box box = square(4.0);
  const auto battery = bump_battery(box);
  ASSERT_GE(battery.size(), 10u);
  const std::vector<int> cells{161, 161};

  // B = 0
  const auto rho_ou = density_from_expr(Expr::parse("exp(-norm2(x)^2)", 2), box, cells);
  auto d0 = decompose(ou(), Expr::parse("exp(-norm2(x)^2)", 2), rho_ou.grid);
  EXPECT_LE(max_normalized(divfree_residual(d0, rho_ou, battery)), 1e-8);

  // rotational, divergence-free against rho
  const auto rot = model2({{"1", "0"}, {"0", "1"}},
                          {"-x1 - x2 * exp(-norm2(x)^2)", "-x2 + x1 * exp(-norm2(x)^2)"});
  auto d1 = decompose(rot, Expr::parse("exp(-norm2(x)^2)", 2), rho_ou.grid);
  const auto r1 = divfree_residual(d1, rho_ou, battery);
  EXPECT_LE(max_normalized(r1), 1e-3);

  // gradient field B = x against Lebesgue measure
  const auto grad = model2({{"1", "0"}, {"0", "1"}}, {"x1", "x2"});
  const auto flat = density_from_expr(Expr::parse("1", 2), box, cells);
  auto d2 = decompose(grad, Expr::parse("1", 2), flat.grid);
  const auto r2 = divfree_residual(d2, flat, battery);
  double least = 1.0;
  for (const auto& r : r2) least = std::min(least, std::fabs(r.normalized));
  EXPECT_GT(least, 0.1);

  Bump bad{{3.5, 0.0}, 1.0};
  EXPECT_THROW(divfree_residual(d2, flat, {bad}), ConfigError);
}

TEST(Divfree, SolvedOuDensity) {
  const auto rho = solve_stationary(ou(), square(4.0), 161);
  auto dec = decompose(ou(), rho);
  EXPECT_LE(dec.max_norm_b(), 1e-2 * dec.max_norm_drift());
  dec.divfree = divfree_residual(dec, rho, bump_battery(rho.grid.box()));
  EXPECT_LE(max_normalized(dec.divfree), 1e-3);
}

TEST(Bump, GradientMatchesExpression) {
  const Bump b{{0.3, -0.2}, 0.9};
  const auto e = Expr::parse(b.expression(), 2);
  std::vector<double> g(2);
  for (auto x : {std::vector<double>{0.1, 0.1}, std::vector<double>{0.8, -0.5}, std::vector<double>{2.0, 0.0}}) {
    const double v = b.value_and_gradient(x, g);
    EXPECT_NEAR(v, e.eval(x), 1e-14);
    EXPECT_NEAR(g[0], e.derive(x, 0), 1e-13);
    EXPECT_NEAR(g[1], e.derive(x, 1), 1e-13);
  }
}

TEST(Sampler, MatchesMoments) {
  const auto rho = density_from_expr(Expr::parse("exp(-norm2(x)^2)", 2), square(4.0), {81, 81});
  DensitySampler s(rho);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> u(3), x(2);
  double m2 = 0.0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    for (double& v : u) v = U(rng);
    s.sample(u, x);
    m2 += x[0] * x[0];
  }
  // Var x1 = 1/2 for exp(-|x|^2)
  EXPECT_NEAR(m2 / n, 0.5, 0.01);
}

TEST(Density, RoundTrip) {
  const auto rho = solve_stationary(ou(), square(2.0), 16);
  const auto dir = std::filesystem::temp_directory_path() / "sdelab_density_test";
  std::filesystem::create_directories(dir);
  write_density(rho, (dir / "d.json").string(), (dir / "d.csv").string());
  const auto back = read_density((dir / "d.json").string(), (dir / "d.csv").string());
  EXPECT_EQ(back.values, rho.values);
  EXPECT_EQ(back.grid.shape(), rho.grid.shape());
  EXPECT_EQ(back.scheme, rho.scheme);
  std::filesystem::remove_all(dir);
}
