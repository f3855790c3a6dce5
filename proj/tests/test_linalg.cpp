#include <random>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "sdelab/linalg.hpp"
#include "sdelab/quadrature.hpp"

using namespace sdelab;

namespace {

std::vector<double> random_spd(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = z(rng);
  Eigen::MatrixXd a = m * m.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  std::vector<double> out(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out[i * n + j] = a(i, j);
  return out;
}

}  // namespace

TEST(Jacobi, AgreesWithEigen) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 7;
    const auto a = random_spd(rng, n);
    const auto eig = jacobi_eigen(a, n);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        a.data(), n, n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(m);
    for (int k = 0; k < n; ++k)
      EXPECT_NEAR(eig.values[k], ref.eigenvalues()(k), 1e-10 * ref.eigenvalues()(n - 1));
  }
}

TEST(SpdSqrt, Examples) {
  std::vector<double> s(4);
  spd_sqrt(std::vector<double>{1, 0, 0, 1}, 2, s);
  EXPECT_NEAR(s[0], 1, 1e-15);
  EXPECT_NEAR(s[1], 0, 1e-15);
  EXPECT_NEAR(s[3], 1, 1e-15);
  spd_sqrt(std::vector<double>{4, 0, 0, 9}, 2, s);
  EXPECT_NEAR(s[0], 2, 1e-15);
  EXPECT_NEAR(s[3], 3, 1e-15);

  // [[2,1],[1,2]]: eigenvalues 1 and 3 on (1,-1)/sqrt2 and (1,1)/sqrt2
  spd_sqrt(std::vector<double>{2, 1, 1, 2}, 2, s);
  const double r3 = std::sqrt(3.0);
  EXPECT_NEAR(s[0], 0.5 * (1 + r3), 1e-14);
  EXPECT_NEAR(s[1], 0.5 * (r3 - 1), 1e-14);
  EXPECT_NEAR(s[2], 0.5 * (r3 - 1), 1e-14);
  EXPECT_NEAR(s[3], 0.5 * (1 + r3), 1e-14);
}

TEST(SpdSqrt, RejectsIndefinite) {
  std::vector<double> s(4);
  EXPECT_THROW(spd_sqrt(std::vector<double>{1, 0, 0, 0}, 2, s), NumericalError);
  EXPECT_THROW(spd_sqrt(std::vector<double>{1, 2, 2, 1}, 2, s), NumericalError);
}

TEST(SpdSqrt, MatchesEigenOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 5;
    const auto a = random_spd(rng, n);
    std::vector<double> s(n * n);
    spd_sqrt(a, n, s);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        a.data(), n, n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(m);
    const Eigen::MatrixXd root = ref.operatorSqrt();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) EXPECT_NEAR(s[i * n + j], root(i, j), 1e-10 * root.norm());
  }
}

TEST(Quadrature, SphereWeightsSumToArea) {
  for (int d = 1; d <= 5; ++d) {
    const auto s = quad::sphere_rule(d, 8);
    double w = 0.0;
    for (double v : s.weights) w += v;
    EXPECT_NEAR(w, quad::sphere_area(d), 1e-10 * quad::sphere_area(d)) << d;
    for (std::size_t k = 0; k < s.size(); ++k) {
      double n2 = 0.0;
      for (int j = 0; j < d; ++j) n2 += s.direction(k)[j] * s.direction(k)[j];
      EXPECT_NEAR(n2, 1.0, 1e-14);
    }
  }
}

TEST(Quadrature, SphereIntegratesSecondMoment) {
  // integral of w_1^2 over S^{d-1} = area / d
  for (int d = 2; d <= 5; ++d) {
    const auto s = quad::sphere_rule(d, 8);
    double acc = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) acc += s.weights[k] * s.direction(k)[0] * s.direction(k)[0];
    EXPECT_NEAR(acc, quad::sphere_area(d) / d, 1e-10);
  }
}

TEST(Quadrature, GaussLegendreExactness) {
  for (int n : {4, 8, 16, 32}) {
    const auto& r = quad::gauss_legendre(n);
    ASSERT_EQ(static_cast<int>(r.nodes.size()), n);
    double acc = 0.0;
    for (int q = 0; q < n; ++q) acc += r.weights[q] * std::pow(r.nodes[q], 2 * n - 2);
    EXPECT_NEAR(acc, 2.0 / (2 * n - 1), 1e-13);
  }
}
