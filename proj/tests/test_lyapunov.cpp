#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sdelab/lyapunov.hpp"

using namespace sdelab;

namespace {

CoefficientModel unit_diffusion(std::vector<std::string> g) {
  return CoefficientModel::from_strings(2, 3.0, {{"1", "0"}, {"0", "1"}}, std::move(g));
}

}  // namespace

TEST(C2, BrownianMotion) {
  const auto r = check_c2(unit_diffusion({"0", "0"}), Region::centered_ball(2, 10.0));
  EXPECT_NEAR(r.minimal_M, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.worst_point[0], 0.0);
  EXPECT_DOUBLE_EQ(r.worst_point[1], 0.0);
  EXPECT_TRUE(r.refinement_stable);
  EXPECT_FALSE(r.non_saturating);
}

TEST(C2, OrnsteinUhlenbeck) {
  const auto r = check_c2(unit_diffusion({"-x1", "-x2"}), Region::centered_ball(2, 10.0));
  EXPECT_NEAR(r.minimal_M, 1.0, 1e-12);
  EXPECT_TRUE(r.refinement_stable);
  EXPECT_FALSE(r.non_saturating);
}

TEST(C2, CubicDriftIsNonSaturating) {
  const auto r = check_c2(unit_diffusion({"x1 * norm2(x)^2", "x2 * norm2(x)^2"}), Region::centered_ball(2, 10.0));
  EXPECT_TRUE(r.non_saturating);
  ASSERT_EQ(r.saturation.size(), 3u);
  EXPECT_GT(r.saturation[2].second, r.saturation[1].second);
}

TEST(C2, UserMViolations) {
  CriterionOptions opt;
  opt.M = 0.5;
  const auto r = check_c2(unit_diffusion({"0", "0"}), Region::centered_ball(2, 1.0, 11), opt);
  EXPECT_FALSE(r.satisfied_for_M);
  EXPECT_GT(r.violation_count, 0u);
  opt.M = 1.0;
  EXPECT_TRUE(check_c2(unit_diffusion({"0", "0"}), Region::centered_ball(2, 1.0, 11), opt).satisfied_for_M);
}

TEST(C2bis, HandAssembledValue) {
  // N0 = 0, A = I, G = 0, d = 2 at |x| = 2
  const std::vector<double> A{1, 0, 0, 1}, G{0, 0}, x{2, 0};
  const double r = 2.0;
  const double pre = 1.0 - 0.5 - 3.0 * r * r * r / (2.0 * r * r * r + 1.0);
  EXPECT_NEAR(c2bis_lhs(A, G, x, 0), pre + 1.0, 1e-15);
  EXPECT_NEAR(c2bis_lhs(A, G, x, 0), 0.088235294117647, 1e-12);
  EXPECT_NEAR(c2bis_rhs(x, 0), (2.0 + 0.25) * 2.0 * (std::log(9.0) + 1.0), 1e-13);
}

TEST(C2bis, AnnulusIsStableUnderRefinement) {
  CriterionOptions opt;
  opt.N0 = 1;
  const auto r = check_c2bis(unit_diffusion({"0", "0"}), Region::annulus(1.5, 10.0), opt);
  EXPECT_GT(r.minimal_M, 0.0);
  EXPECT_TRUE(std::isfinite(r.minimal_M));
  EXPECT_TRUE(r.refinement_stable) << r.minimal_M << " vs " << *r.refined_minimal_M;
}

TEST(C2bis, InwardDriftNeverIncreasesRatio) {
  CriterionOptions opt;
  opt.N0 = 1;
  opt.refinement_check = opt.saturation_check = false;
  const auto base = check_c2bis(unit_diffusion({"0", "0"}), Region::annulus(1.5, 10.0), opt);
  const auto in = check_c2bis(unit_diffusion({"-x1 * norm2(x)^2", "-x2 * norm2(x)^2"}),
                              Region::annulus(1.5, 10.0), opt);
  EXPECT_LE(in.minimal_M, base.minimal_M);
}

TEST(C2bis, RejectsPointsInsideBall) {
  CriterionOptions opt;
  opt.N0 = 1;
  EXPECT_THROW(check_c2bis(unit_diffusion({"0", "0"}), Region::centered_ball(2, 3.0), opt), ConfigError);
}

TEST(DriftOnly, InwardIsZero) {
  for (double R : {1.0, 10.0, 100.0}) {
    const auto r = check_drift_only(unit_diffusion({"-x1", "-x2"}), Region::centered_ball(2, R), false);
    EXPECT_EQ(r.minimal_M, 0.0);
  }
}

TEST(DriftOnly, LogGrowthBoundedByOne) {
  const auto r = check_drift_only(unit_diffusion({"x1 * ln(norm2(x)^2 + 1)", "x2 * ln(norm2(x)^2 + 1)"}),
                                  Region::centered_ball(2, 10.0), false);
  EXPECT_LE(r.minimal_M, 1.0);
  EXPECT_GT(r.minimal_M, 0.5);
  EXPECT_FALSE(r.non_saturating);
}

TEST(DriftOnly, SuperlinearIsNonSaturating) {
  const auto r = check_drift_only(unit_diffusion({"x1 * norm2(x)", "x2 * norm2(x)"}),
                                  Region::centered_ball(2, 10.0), false);
  EXPECT_TRUE(r.non_saturating);
}

TEST(Monotonicity, InwardComponentNeverIncreasesM) {
  const auto region = Region::centered_ball(2, 5.0, 21);
  CriterionOptions opt;
  opt.refinement_check = opt.saturation_check = false;
  const auto g = unit_diffusion({"sin(x2) + x1", "x1 * x2"});
  const auto g2 = unit_diffusion({"sin(x2) + x1 - 0.7 * x1", "x1 * x2 - 0.7 * x2"});
  EXPECT_LE(check_c2(g2, region, opt).minimal_M, check_c2(g, region, opt).minimal_M);
  EXPECT_LE(check_drift_only(g2, region, false, opt).minimal_M,
            check_drift_only(g, region, false, opt).minimal_M);
}

TEST(Dual, GaussianDensity) {
  const auto ou = unit_diffusion({"-x1", "-x2"});
  VectorField beta = [](std::span<const double> x, std::span<double> out) {
    out[0] = -x[0];
    out[1] = -x[1];
  };
  const auto r = check_dual(ou, beta, Region::centered_ball(2, 10.0));
  EXPECT_NEAR(r.minimal_M, 1.0, 1e-12);
  const auto c = check_c2(ou, Region::centered_ball(2, 10.0));
  EXPECT_EQ(r.minimal_M, c.minimal_M);
  EXPECT_EQ(r.worst_point, c.worst_point);
}

TEST(GeneralV, Examples) {
  const auto bm = unit_diffusion({"0", "0"});
  const auto region = Region::centered_ball(2, 3.0, 21);
  EXPECT_EQ(check_general_V(bm, Expr::parse("1", 2), region).minimal_M, 0.0);
  EXPECT_NEAR(check_general_V(bm, Expr::parse("norm2(x)^2 + 1", 2), region).minimal_M, 2.0, 1e-12);
  EXPECT_NEAR(check_general_V(bm, Expr::parse("ln(norm2(x)^2 + 1) + 1", 2), region).minimal_M, 2.0, 1e-12);
  EXPECT_THROW(check_general_V(bm, Expr::parse("x1", 2), region), ConfigError);
}

TEST(Identity, GeneratorOfLogLyapunovFunction) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  const auto V = Expr::parse("ln(norm2(x)^2 + 1) + 1", 2);
  const auto m = CoefficientModel::from_strings(2, 3.0, {{"2 + x1^2", "0.5 * x1 * x2"}, {"0.5 * x1 * x2", "1 + x2^2"}},
                                                {"x1^3 - x2", "x1 * x2 + 1"});
  std::vector<double> A(4), G(2);
  for (int k = 0; k < 100; ++k) {
    const std::vector<double> x{U(rng), U(rng)};
    m.diffusion(x, A);
    m.drift(x, G);
    const double s = x[0] * x[0] + x[1] * x[1];
    const double lhs = c2_lhs(A, G, x);
    EXPECT_NEAR(0.5 * (s + 1.0) * apply_generator(m, V, x), lhs, 1e-8 * std::max(1.0, std::fabs(lhs)));
  }
}

TEST(Report, Json) {
  const auto r = check_c2(unit_diffusion({"0", "0"}), Region::centered_ball(2, 1.0, 5));
  const auto j = to_json(r);
  EXPECT_EQ(j["criterion"], "C2");
  EXPECT_TRUE(j.contains("worst_point"));
  EXPECT_TRUE(j["saturation"].contains("non_saturating"));
}
