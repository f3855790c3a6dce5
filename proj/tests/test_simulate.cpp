#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "sdelab/simulate.hpp"

using namespace sdelab;

namespace {

CoefficientModel model2(std::vector<std::vector<std::string>> A, std::vector<std::string> G,
                        std::optional<std::vector<std::vector<std::string>>> sigma = {}) {
  return CoefficientModel::from_strings(2, 3.0, std::move(A), std::move(G), std::move(sigma));
}

const CoefficientModel& bm() {
  static const auto m = model2({{"1", "0"}, {"0", "1"}}, {"0", "0"});
  return m;
}

SimConfig base(std::vector<double> x0, double h, double T, std::size_t paths) {
  SimConfig c;
  c.x0 = std::move(x0);
  c.h = h;
  c.T = T;
  c.paths = paths;
  c.seed = 12345;
  c.threads = 1;
  return c;
}

double sq(const std::vector<double>& v) {
  double a = 0.0;
  for (double c : v) a += c * c;
  return a;
}

}  // namespace

TEST(Simulate, BrownianSecondMoment) {
  const auto ps = simulate_paths(bm(), base({0, 0}, 1e-3, 1.0, 10000));
  double mean = 0.0;
  for (const auto& p : ps) {
    mean += sq(p.final_state);
    EXPECT_DOUBLE_EQ(p.final_time, 1.0);
  }
  mean /= ps.size();
  EXPECT_GE(mean, 1.94);
  EXPECT_LE(mean, 2.06);
}

TEST(Simulate, DegenerateNoiseFollowsOde) {
  const auto m = model2({{"0", "0"}, {"0", "0"}}, {"-x1", "-x2"}, {{{"0", "0"}, {"0", "0"}}});
  const auto ps = simulate_paths(m, base({1, 2}, 1e-3, 1.0, 1));
  const double e = std::exp(-1.0);
  EXPECT_NEAR(ps[0].final_state[0], e, 1e-3);
  EXPECT_NEAR(ps[0].final_state[1], 2 * e, 2e-3);
  // explicit Euler: (1 - h)^n
  EXPECT_NEAR(ps[0].final_state[0], std::pow(1 - 1e-3, 1000), 1e-12);
}

TEST(Simulate, CubicDriftExplodes) {
  const auto m = model2({{"1", "0"}, {"0", "1"}}, {"x1 * norm2(x)^2", "x2 * norm2(x)^2"});
  auto c = base({1, 0}, 1e-3, 2.0, 1000);
  c.R_max = 1e4;
  const auto ps = simulate_paths(m, c);
  std::size_t n = 0;
  for (const auto& p : ps) {
    n += p.zeta_hat <= 2.0;
    double prev = 0.0;
    for (double t : p.exit_times) {
      EXPECT_GE(t, prev);
      prev = t;
    }
    if (p.zeta_hat < kInf) EXPECT_EQ(p.exit_times.back(), p.zeta_hat);
  }
  EXPECT_GE(n, 950u);
}

TEST(Simulate, TamingBoundsTheStep) {
  const auto m = model2({{"1", "0"}, {"0", "1"}}, {"x1 * norm2(x)^2", "x2 * norm2(x)^2"});
  auto c = base({1, 0}, 1e-3, 2.0, 50);
  c.R_max = 1e4;
  c.taming = true;
  const auto ps = simulate_paths(m, c);
  const auto f = run_flags(ps);
  EXPECT_GT(f.taming_activations, 0u);
  for (const auto& p : ps) EXPECT_EQ(p.zeta_hat, kInf);
}

TEST(Simulate, Reproducible) {
  const auto m = model2({{"1", "0.3"}, {"0.3", "2"}}, {"-x1 + sin(x2)", "-x2"});
  auto c = base({0.5, -0.5}, 1e-2, 1.0, 37);
  const auto a = simulate_paths(m, c);
  const auto b = simulate_paths(m, c);
  c.threads = 4;
  const auto d = simulate_paths(m, c);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].final_state, b[i].final_state);
    EXPECT_EQ(a[i].final_state, d[i].final_state);
    EXPECT_EQ(a[i].int_g, d[i].int_g);
  }
  // a path does not depend on which batch it belongs to
  c.first_path = 5;
  c.paths = 3;
  const auto e = simulate_paths(m, c);
  EXPECT_EQ(e[0].final_state, a[5].final_state);
  c.seed = 99;
  EXPECT_NE(simulate_paths(m, c)[0].final_state, a[5].final_state);
}

TEST(Simulate, NoiseCoupling) {
  auto coarse = base({0, 0}, 1e-2, 1.0, 20);
  coarse.noise_substeps = 2;
  auto fine = base({0, 0}, 5e-3, 1.0, 20);
  const auto a = simulate_paths(bm(), coarse), b = simulate_paths(bm(), fine);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(a[i].final_state[k], b[i].final_state[k], 1e-12);
}

TEST(Simulate, SigmaAndSqrtADriversAgreeInLaw) {
  const auto with_sigma = model2({{"1.25", "0.5"}, {"0.5", "1"}}, {"-x1", "-x2"}, {{{"1", "0.5"}, {"0", "1"}}});
  const auto with_A = model2({{"1.25", "0.5"}, {"0.5", "1"}}, {"-x1", "-x2"});
  const auto c = base({1, 0}, 1e-2, 1.0, 4000);
  auto stats = [](const std::vector<PathSample>& ps) {
    double s = 0, s2 = 0;
    for (const auto& p : ps) {
      const double r = std::sqrt(sq(p.final_state));
      s += r;
      s2 += r * r;
    }
    const double n = ps.size(), mean = s / n, var = s2 / n - mean * mean;
    return std::array<double, 3>{mean, var, std::sqrt(var / n)};
  };
  const auto a = stats(simulate_paths(with_sigma, c)), b = stats(simulate_paths(with_A, c));
  EXPECT_LE(std::fabs(a[0] - b[0]), 3 * std::hypot(a[2], b[2]));
  // variance of the sample variance ~ 2 var^2 / n for near-Gaussian radii
  EXPECT_LE(std::fabs(a[1] - b[1]), 3 * std::sqrt(2.0 / 4000) * (a[1] + b[1]));
}

TEST(Simulate, SingularPointIsRetried) {
  const auto m = model2({{"1", "0"}, {"0", "1"}}, {"x1 / norm2(x)", "x2 / norm2(x)"});
  const auto ps = simulate_paths(m, base({0, 0}, 1e-3, 0.1, 5));
  for (const auto& p : ps) {
    EXPECT_EQ(p.faults, 1u);
    EXPECT_FALSE(p.faulted);
  }
  const auto bad = model2({{"1", "0"}, {"0", "1"}}, {"ln(x1 - 100)", "0"});
  const auto qs = simulate_paths(bad, base({0, 0}, 1e-3, 0.1, 5));
  const auto f = run_flags(qs);
  EXPECT_EQ(f.faulted, 5u);
  EXPECT_TRUE(f.fault_flag);
}

TEST(Simulate, ExitTimes) {
  auto c = base({0, 0}, 1e-4, 3.0, 2000);
  const auto s = first_exit_stats(bm(), c, 1.0);
  EXPECT_EQ(s.exited, 2000u);
  // discrete monitoring bias ~ 0.58 sqrt(h)
  EXPECT_NEAR(s.mean, 0.5, 4 * s.se + 0.6 * std::sqrt(c.h));
  c.x0 = {2, 0};
  c.paths = 3;
  EXPECT_DOUBLE_EQ(first_exit_stats(bm(), c, 1.0).mean, 0.0);
  // larger ball, later exit
  c.x0 = {0, 0};
  c.paths = 500;
  EXPECT_LE(first_exit_stats(bm(), c, 0.5).mean, first_exit_stats(bm(), c, 1.0).mean);
}

TEST(Simulate, Wilson) {
  const auto ci = wilson(0, 1000);
  EXPECT_DOUBLE_EQ(ci.lower, 0.0);
  const double z2 = 1.959963984540054 * 1.959963984540054;
  EXPECT_NEAR(ci.upper, z2 / (1000 + z2), 1e-12);
  const auto mid = wilson(500, 1000);
  EXPECT_NEAR(mid.lower + mid.upper, 1.0, 1e-12);
}

TEST(Simulate, ExplosionProbability) {
  const auto ou = model2({{"1", "0"}, {"0", "1"}}, {"-x1", "-x2"});
  auto c = base({1, 0}, 1e-2, 5.0, 200);
  const auto e = explosion_prob(ou, c, 5.0);
  EXPECT_EQ(e.exploded, 0u);
  EXPECT_LT(e.ci.upper, 0.02);
  EXPECT_EQ(e.refinement_paths, 20u);
  c.paths = 50;
  EXPECT_THROW(explosion_prob(ou, c, 5.0), ConfigError);
}

TEST(Simulate, QuadraticVariationOfCoordinate) {
  const auto tf = TestFunction::from_expr(Expr::parse("x1", 2));
  const auto ps = simulate_paths(bm(), base({0, 0}, 1e-3, 1.0, 200), std::span(&tf, 1));
  double realized = 0.0;
  for (const auto& p : ps) {
    EXPECT_NEAR(p.tests[0].qv_predicted, 1.0, 1e-9);
    EXPECT_NEAR(p.tests[0].martingale, p.final_state[0], 1e-12);
    realized += p.tests[0].qv_realized;
  }
  EXPECT_NEAR(realized / ps.size(), 1.0, 0.01);
}

TEST(Simulate, BumpHessianMatchesExpression) {
  const Bump b{{0.2, -0.1}, 0.9};
  const Expr e = Expr::parse(b.expression(), 2);
  const std::vector<double> x{0.4, 0.3};
  std::vector<double> g(2), h(4), ge(2), he(4);
  const double v = b.value_gradient_hessian(x, g, h);
  EXPECT_NEAR(v, e.hessian(x, ge, he), 1e-14);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(g[i], ge[i], 1e-13);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(h[i], he[i], 1e-12);
}

TEST(Simulate, TraceCsv) {
  auto c = base({0, 0}, 0.1, 1.0, 2);
  c.trace_stride = 5;
  const auto ps = simulate_paths(bm(), c);
  const auto csv = trace_csv(ps, 2);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "path,k,t,x1,x2");
  EXPECT_EQ(ps[0].steps, (std::vector<std::size_t>{0, 5, 10}));
}

TEST(Simulate, RejectsBadConfig) {
  auto c = base({0, 0}, 1.0, 0.5, 2);
  EXPECT_THROW(simulate_paths(bm(), c), ConfigError);
  c = base({0, 0, 0}, 0.1, 1.0, 2);
  EXPECT_THROW(simulate_paths(bm(), c), ConfigError);
  c = base({0, 0}, 0.1, 1.0, 2);
  c.ladder = {2, 1};
  EXPECT_THROW(simulate_paths(bm(), c), ConfigError);
}
