#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sdelab/expr.hpp"

using sdelab::ConfigError;
using sdelab::DomainError;
using sdelab::Expr;
using sdelab::ParseError;

namespace {

double at(const Expr& e, std::vector<double> x) { return e.eval(x); }

}  // namespace

TEST(Expr, ParsesPolynomial) {
  const Expr e = Expr::parse("x1^2 + x2^2", 2);
  EXPECT_DOUBLE_EQ(at(e, {3, 4}), 25.0);
  EXPECT_EQ(e.str(), "x1^2 + x2^2");
}

TEST(Expr, UnaryMinus) {
  EXPECT_DOUBLE_EQ(at(Expr::parse("-x1", 2), {2, 0}), -2.0);
  // binds looser than ^
  EXPECT_DOUBLE_EQ(at(Expr::parse("-x1^2", 2), {3, 0}), -9.0);
  EXPECT_DOUBLE_EQ(at(Expr::parse("2^-1", 1), {0}), 0.5);
  EXPECT_DOUBLE_EQ(at(Expr::parse("--x1", 1), {4}), 4.0);
}

TEST(Expr, VariableOutOfRange) {
  EXPECT_THROW(Expr::parse("x3", 2), ParseError);
  EXPECT_THROW(Expr::parse("x0", 2), ParseError);
}

TEST(Expr, SyntaxErrorsCarryPosition) {
  try {
    Expr::parse("x1 +\n  * x2", 2);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_EQ(e.column(), 3);
  }
  EXPECT_THROW(Expr::parse("foo(x1)", 1), ParseError);
  EXPECT_THROW(Expr::parse("(x1", 1), ParseError);
  EXPECT_THROW(Expr::parse("x1 x1", 1), ParseError);
  EXPECT_THROW(Expr::parse("", 1), ParseError);
  EXPECT_THROW(Expr::parse("exp(x1, x1)", 1), ParseError);
}

TEST(Expr, Functions) {
  EXPECT_DOUBLE_EQ(at(Expr::parse("ln(norm2(x)+1)", 2), {0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(at(Expr::parse("norm2(x)", 3), {1, 2, 2}), 3.0);
  EXPECT_DOUBLE_EQ(at(Expr::parse("norm2(x1, x2)", 3), {3, 4, 12}), 5.0);
  EXPECT_DOUBLE_EQ(at(Expr::parse("min(x1, x2, 3)", 2), {5, 4}), 3.0);
  EXPECT_DOUBLE_EQ(at(Expr::parse("max(x1, x2)", 2), {5, 4}), 5.0);
  EXPECT_DOUBLE_EQ(at(Expr::parse("pow(x1, 3)", 1), {2}), 8.0);
  EXPECT_DOUBLE_EQ(at(Expr::parse("abs(x1) + sqrt(x2)", 2), {-2, 9}), 5.0);
  EXPECT_NEAR(at(Expr::parse("sin(x1)^2 + cos(x1)^2", 1), {0.7}), 1.0, 1e-15);
  EXPECT_NEAR(at(Expr::parse("exp(1)", 1), {0}), std::exp(1.0), 1e-15);
  EXPECT_DOUBLE_EQ(at(Expr::parse("1.5e1 / 3", 1), {0}), 5.0);
}

TEST(Expr, DomainErrors) {
  EXPECT_THROW(at(Expr::parse("1/x1", 2), {0, 1}), DomainError);
  EXPECT_THROW(at(Expr::parse("ln(x1)", 1), {0}), DomainError);
  EXPECT_THROW(at(Expr::parse("ln(x1)", 1), {-1}), DomainError);
  EXPECT_THROW(at(Expr::parse("sqrt(x1)", 1), {-1}), DomainError);
  EXPECT_THROW(at(Expr::parse("x1^0.5", 1), {-1}), DomainError);
  EXPECT_THROW(at(Expr::parse("exp(x1)", 1), {1000}), DomainError);
  EXPECT_DOUBLE_EQ(at(Expr::parse("x1^3", 1), {-2}), -8.0);
  EXPECT_THROW(at(Expr::parse("x1", 2), {1}), ConfigError);
}

TEST(Expr, Derivatives) {
  const Expr e = Expr::parse("x1^2 + x2^2", 2);
  const std::vector<double> x{3, 4};
  EXPECT_DOUBLE_EQ(e.derive(x, 0), 6.0);
  const Expr f = Expr::parse("x1^2 * x2", 2);
  EXPECT_DOUBLE_EQ(f.derive2(std::vector<double>{2, 5}, 0, 1), 4.0);
  const Expr g = Expr::parse("exp(-(x1^2 + x2^2))", 2);
  EXPECT_NEAR(g.derive(std::vector<double>{1, 0}, 0), -2.0 * std::exp(-1.0), 1e-15);
}

TEST(Expr, NormPowersSmoothAtOrigin) {
  const Expr e = Expr::parse("norm2(x)^2", 2);
  const std::vector<double> z{0, 0};
  EXPECT_DOUBLE_EQ(e.derive(z, 0), 0.0);
  EXPECT_DOUBLE_EQ(e.derive2(z, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(e.derive2(z, 0, 1), 0.0);
}

TEST(Expr, KinkConventions) {
  const std::vector<double> z{0.0};
  EXPECT_DOUBLE_EQ(Expr::parse("abs(x1)", 1).derive(z, 0), 1.0);
  // tie keeps the first argument
  EXPECT_DOUBLE_EQ(Expr::parse("max(x1, 0)", 1).derive(z, 0), 1.0);
  EXPECT_DOUBLE_EQ(Expr::parse("min(0, x1)", 1).derive(z, 0), 0.0);
}

TEST(Expr, RoundTrip) {
  const char* sources[] = {
      "x1^2 + x2^2",       "-x1",          "-x1^2",         "(-x1)^2",
      "x1 - (x2 - 3)",     "x1 / (x2 * 2)", "2^3^2",         "(2^3)^2",
      "exp(-(x1^2))",      "norm2(x)^1.5", "norm2(x1, x2)",  "min(x1, 2, x2)",
      "pow(x1, x2) - 1e-3", "ln(1 + abs(x2)) * sin(x1) / cos(x2)",
      "x1 * -x2",          "1.2345678901234567", "0.1 + 1e+300"};
  for (const char* s : sources) {
    const Expr a = Expr::parse(s, 2);
    const Expr b = Expr::parse(a.str(), 2);
    EXPECT_TRUE(a == b) << s << " -> " << a.str();
    EXPECT_EQ(a.str(), b.str());
  }
}

TEST(Expr, Derive2IsSymmetric) {
  const Expr e = Expr::parse("sin(x1 * x2) * exp(x3 - x1) + norm2(x)^3", 3);
  const std::vector<double> x{0.3, -1.2, 0.8};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(e.derive2(x, i, j), e.derive2(x, j, i));
}

TEST(Expr, HessianMatchesDerive2) {
  const Expr e = Expr::parse("x1^3 * x2 + exp(x2) * cos(x1)", 2);
  const std::vector<double> x{0.4, -0.3};
  std::vector<double> g(2), h(4);
  const double v = e.hessian(x, g, h);
  EXPECT_DOUBLE_EQ(v, e.eval(x));
  for (int i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(g[i], e.derive(x, i));
    for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(h[i * 2 + j], e.derive2(x, i, j));
  }
  std::vector<double> g2(2);
  EXPECT_DOUBLE_EQ(e.gradient(x, g2), v);
  EXPECT_EQ(g, g2);
}

TEST(Expr, DeeplyNestedUsesHeapStack) {
  std::string s = "x1";
  for (int k = 0; k < 60; ++k) s = "(1 + " + s + ")";
  std::string t = "x1";
  for (int k = 0; k < 60; ++k) t = "(x1 * " + t + ")";
  const Expr e = Expr::parse(s, 1);
  EXPECT_DOUBLE_EQ(at(e, {0.5}), 60.5);
  const Expr f = Expr::parse("1 + (" + t + ")", 1);
  EXPECT_DOUBLE_EQ(at(f, {1.0}), 2.0);
}
