#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sdelab/model.hpp"

using namespace sdelab;

namespace {

CoefficientModel identity_model(std::vector<std::string> g, int d = 2) {
  std::vector<std::vector<std::string>> a(d, std::vector<std::string>(d, "0"));
  for (int i = 0; i < d; ++i) a[i][i] = "1";
  return CoefficientModel::from_strings(d, d + 1.0, a, std::move(g));
}

}  // namespace

TEST(Model, BuildsValidModel) {
  const auto m = identity_model({"-x1", "-x2"});
  EXPECT_EQ(m.dim(), 2);
  EXPECT_TRUE(m.constant_diffusion());
  EXPECT_TRUE(m.warnings().empty());
}

TEST(Model, RejectsPNotAboveDim) {
  EXPECT_THROW(CoefficientModel::from_strings(2, 2.0, {{"1", "0"}, {"0", "1"}}, {"0", "0"}),
               ConfigError);
}

TEST(Model, RejectsShapeMismatch) {
  EXPECT_THROW(CoefficientModel::from_strings(2, 3.0, {{"1", "0"}, {"0", "1"}}, {"0", "0"},
                                              std::vector<std::vector<std::string>>{{"1", "0"}, {"0", "1"}, {"0", "0"}}),
               ConfigError);
  EXPECT_THROW(CoefficientModel::from_strings(2, 3.0, {{"1", "0"}}, {"0", "0"}), ConfigError);
  EXPECT_THROW(CoefficientModel::from_strings(2, 3.0, {{"1", "0"}, {"0", "1"}}, {"0"}), ConfigError);
  EXPECT_THROW(CoefficientModel::from_strings(2, 3.0, {{"1", "0"}, {"0", "1"}}, {"x3", "0"}), ConfigError);
}

TEST(Model, WarnsOnInconsistentSigmaAndRho) {
  const auto m = CoefficientModel::from_strings(
      2, 3.0, {{"1", "0"}, {"0", "1"}}, {"0", "0"},
      std::vector<std::vector<std::string>>{{"2", "0"}, {"0", "1"}}, std::string("x1"));
  EXPECT_EQ(m.warnings().size(), 2u);
}

TEST(Model, SqrtA) {
  const auto m = CoefficientModel::from_strings(2, 3.0, {{"2", "1"}, {"1", "2"}}, {"0", "0"});
  const auto s = sqrt_A(m, std::vector<double>{0.0, 0.0});
  // s^2 = A
  EXPECT_NEAR(s(0, 0) * s(0, 0) + s(0, 1) * s(1, 0), 2.0, 1e-14);
  EXPECT_NEAR(s(0, 0) * s(0, 1) + s(0, 1) * s(1, 1), 1.0, 1e-14);
  EXPECT_DOUBLE_EQ(s(0, 1), s(1, 0));
}

TEST(Model, Generator) {
  const auto bm = identity_model({"0", "0"});
  const auto u = Expr::parse("x1^2 + x2^2", 2);
  EXPECT_DOUBLE_EQ(apply_generator(bm, u, std::vector<double>{0.3, -2.0}), 2.0);
  const auto ou = identity_model({"-x1", "-x2"});
  EXPECT_DOUBLE_EQ(apply_generator(ou, Expr::parse("norm2(x)^2", 2), std::vector<double>{1, 1}), -2.0);
  EXPECT_DOUBLE_EQ(apply_generator(ou, Expr::parse("7", 2), std::vector<double>{1, 1}), 0.0);
}

TEST(Model, GeneratorIsLinear) {
  const auto m = CoefficientModel::from_strings(2, 3.0, {{"1 + x1^2", "0.2*x2"}, {"0.2*x2", "2"}},
                                                {"sin(x1)", "-x2^3"});
  const auto u = Expr::parse("exp(-x1^2) * x2", 2);
  const auto v = Expr::parse("cos(x1 * x2)", 2);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1.5, 1.5);
  for (int k = 0; k < 50; ++k) {
    const double a = U(rng), b = U(rng);
    const std::vector<double> x{U(rng), U(rng)};
    const auto w = Expr::parse(std::to_string(a) + " * (" + u.str() + ") + " + std::to_string(b) +
                                   " * (" + v.str() + ")",
                               2);
    const double a_exact = std::stod(std::to_string(a)), b_exact = std::stod(std::to_string(b));
    EXPECT_NEAR(apply_generator(m, w, x),
                a_exact * apply_generator(m, u, x) + b_exact * apply_generator(m, v, x), 1e-10);
  }
}

TEST(Model, SigmaAndAGiveSameGenerator) {
  const auto with_sigma = CoefficientModel::from_strings(
      2, 3.0, {{"(1 + 0.1*sin(x1))^2", "0"}, {"0", "1"}}, {"-x1", "-x2"},
      std::vector<std::vector<std::string>>{{"1 + 0.1*sin(x1)", "0"}, {"0", "1"}});
  EXPECT_TRUE(with_sigma.warnings().empty());
  const auto u = Expr::parse("exp(-norm2(x)^2)", 2);
  std::vector<double> x{0.4, -0.9}, s(4), a(4);
  with_sigma.dispersion(x, s);
  with_sigma.diffusion(x, a);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double ss = 0.0;
      for (int k = 0; k < 2; ++k) ss += s[i * 2 + k] * s[j * 2 + k];
      EXPECT_NEAR(ss, a[i * 2 + j], 1e-12);
    }
  EXPECT_TRUE(std::isfinite(apply_generator(with_sigma, u, x)));
}

TEST(Ellipticity, Identity) {
  const auto m = identity_model({"0", "0"});
  const auto r = check_ellipticity(m, Region::centered_ball(2, 1.0));
  EXPECT_TRUE(r.pass);
  EXPECT_DOUBLE_EQ(r.min_eigenvalue, 1.0);
  EXPECT_DOUBLE_EQ(r.max_eigenvalue, 1.0);
}

TEST(Ellipticity, VariableDiagonal) {
  const auto m = CoefficientModel::from_strings(2, 3.0, {{"1 + x1^2", "0"}, {"0", "1"}}, {"0", "0"});
  const auto r = check_ellipticity(m, Region::centered_ball(2, 2.0));
  EXPECT_TRUE(r.pass);
  EXPECT_DOUBLE_EQ(r.min_eigenvalue, 1.0);
  EXPECT_NEAR(r.max_eigenvalue, 5.0, 1e-12);
}

TEST(Ellipticity, DegenerateOnAxis) {
  const auto m = CoefficientModel::from_strings(2, 3.0, {{"x1^2", "0"}, {"0", "1"}}, {"0", "0"});
  const auto r = check_ellipticity(m, Region::centered_ball(2, 1.0));
  EXPECT_FALSE(r.pass);
  EXPECT_DOUBLE_EQ(r.min_eigenvalue, 0.0);
  EXPECT_DOUBLE_EQ(r.min_point[0], 0.0);
}

TEST(Ellipticity, GlobalLowerBoundAcrossRegions) {
  const auto m = CoefficientModel::from_strings(2, 3.0, {{"1 + 1/(1 + x1^2)", "0"}, {"0", "2"}}, {"0", "0"});
  const auto reps = check_ellipticity(m, {Region::centered_ball(2, 1.0), Region::centered_ball(2, 10.0)});
  ASSERT_EQ(reps.size(), 2u);
  EXPECT_GE(*reps[0].global_lower_bound, *reps[1].global_lower_bound);
  EXPECT_NEAR(*reps[1].global_lower_bound, 1.0 + 1.0 / 101.0, 1e-12);
}

TEST(Integrability, SingularDriftVerdicts) {
  const auto m = identity_model({"x1 / norm2(x)^1.5", "x2 / norm2(x)^1.5"});
  const auto ball = Region::centered_ball(2, 1.0, 9);
  auto r3 = check_integrability(m, ball, IntegrandKind::drift, 3.0);
  EXPECT_EQ(r3.verdict, IntegrabilityVerdict::finite);
  EXPECT_NEAR(r3.estimates.back(), 4.0 * quad::kPi, 0.02 * 4.0 * quad::kPi);
  auto r5 = check_integrability(m, ball, IntegrandKind::drift, 5.0);
  EXPECT_EQ(r5.verdict, IntegrabilityVerdict::diverging);
}

TEST(Integrability, BoundedDrift) {
  const auto m = identity_model({"-x1", "-x2"});
  const auto r = check_integrability(m, Region::centered_ball(2, 1.0, 9), IntegrandKind::drift, 3.0);
  EXPECT_EQ(r.verdict, IntegrabilityVerdict::finite);
  // integral of r^3 * 2 pi r dr over [0,1]
  EXPECT_NEAR(r.estimates.back(), 2.0 * quad::kPi / 5.0, 1e-6);
}

TEST(Integrability, HomogeneousRule) {
  for (int d : {2, 3})
    for (double alpha : {0.25, 0.5, 0.75}) {
      std::vector<std::string> g(d);
      for (int i = 0; i < d; ++i)
        g[i] = "x" + std::to_string(i + 1) + " / norm2(x)^" + std::to_string(1.0 + alpha);
      const auto m = identity_model(g, d);
      for (double f : {0.5, 1.5}) {
        const double p = d / alpha * f;
        const auto r = check_integrability(m, Region::centered_ball(d, 1.0, 9), IntegrandKind::drift, p);
        EXPECT_EQ(r.verdict, f < 1 ? IntegrabilityVerdict::finite : IntegrabilityVerdict::diverging)
            << "d=" << d << " alpha=" << alpha << " p=" << p;
      }
    }
}

TEST(Integrability, GradAOfSmoothMatrixIsFinite) {
  const auto m = CoefficientModel::from_strings(2, 3.0, {{"1 + x1^2", "0"}, {"0", "1"}}, {"0", "0"});
  const auto r = check_integrability(m, Region::box({-1, -1}, {1, 1}, 9), IntegrandKind::grad_A, 3.0);
  EXPECT_EQ(r.verdict, IntegrabilityVerdict::finite);
  // integral over the square of |2 x1|^3 = 2 * 2 * 8 / 4
  // box corners make the angular integrand non-smooth; accuracy is coarse
  EXPECT_NEAR(r.estimates.back(), 8.0, 0.03 * 8.0);
}
