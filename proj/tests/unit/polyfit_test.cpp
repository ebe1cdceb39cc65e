#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "adunit/lane/polyfit.hpp"

using namespace adunit;
using namespace adunit::lane;

namespace
{

double rel_err(const std::vector<double> & got, const std::vector<double> & want)
{
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    num = std::max(num, std::abs(got[i] - want[i]));
    den = std::max(den, std::abs(want[i]));
  }
  return den > 0.0 ? num / den : num;
}

// Normal equations built and solved in long double with full-pivot LU.
std::vector<double> oracle_normal(const std::vector<Sample> & pts, std::size_t k)
{
  using Mat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(k + 1);
  Mat a = Mat::Zero(n, n);
  Vec b = Vec::Zero(n);
  for (const auto & p : pts) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const long double xi = std::pow(static_cast<long double>(p.x), static_cast<long double>(i));
      b(i) += xi * p.y;
      for (Eigen::Index j = 0; j < n; ++j) {
        a(i, j) += xi * std::pow(static_cast<long double>(p.x), static_cast<long double>(j));
      }
    }
  }
  const Vec x = a.fullPivLu().solve(b);
  std::vector<double> out(k + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = static_cast<double>(x(i));
  }
  return out;
}

// Least squares on the Vandermonde matrix by column-pivoted QR.
std::vector<double> oracle_qr(const std::vector<Sample> & pts, std::size_t k)
{
  Eigen::MatrixXd v(pts.size(), k + 1);
  Eigen::VectorXd y(pts.size());
  for (std::size_t r = 0; r < pts.size(); ++r) {
    double xp = 1.0;
    for (std::size_t c = 0; c <= k; ++c) {
      v(r, c) = xp;
      xp *= pts[r].x;
    }
    y(r) = pts[r].y;
  }
  const Eigen::VectorXd a = v.colPivHouseholderQr().solve(y);
  return {a.data(), a.data() + a.size()};
}

}  // namespace

TEST(Polyfit, ConstantFunction)
{
  std::vector<Sample> pts;
  for (int x = 0; x < 10; ++x) {
    pts.push_back({static_cast<double>(x), 2.0});
  }
  const auto c = polyfit(pts, 2);
  ASSERT_EQ(c.a.size(), 3u);
  EXPECT_NEAR(c.a[0], 2.0, 1e-12);
  EXPECT_NEAR(c.a[1], 0.0, 1e-12);
  EXPECT_NEAR(c.a[2], 0.0, 1e-12);
}

TEST(Polyfit, ExactQuadratic)
{
  std::vector<Sample> pts;
  for (int x = 0; x <= 5; ++x) {
    pts.push_back({static_cast<double>(x), 1.0 + 2.0 * x + 3.0 * x * x});
  }
  const auto c = polyfit(pts, 2);
  EXPECT_LE(rel_err(c.a, {1.0, 2.0, 3.0}), 1e-9);
  EXPECT_NEAR(c(2.0), 17.0, 1e-9);
}

TEST(Polyfit, ExactRecoveryProperty)
{
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coef(-5.0, 5.0);
  std::uniform_int_distribution<int> deg(0, 3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = static_cast<std::size_t>(deg(rng));
    const double span = trial % 3 == 0 ? 1.0 : (trial % 3 == 1 ? 50.0 : 480.0);
    std::vector<double> gen(k + 1);
    for (std::size_t j = 0; j <= k; ++j) {
      gen[j] = coef(rng) / std::pow(span, static_cast<double>(j));
    }
    PolyCoeffs g {gen};
    std::uniform_real_distribution<double> xs(0.0, span);
    std::vector<Sample> pts;
    const std::size_t n = k + 1 + static_cast<std::size_t>(trial % 40);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = i <= k ? span * static_cast<double>(i) / static_cast<double>(k + 1) : xs(rng);
      pts.push_back({x, g(x)});
    }
    const auto c = polyfit(pts, k);
    EXPECT_LE(rel_err(c.a, gen), 1e-9) << "trial " << trial << " k " << k;
    if (n >= k + 2 && k < 3) {
      // One degree more than the generator: the extra coefficient is zero.
      auto padded = gen;
      padded.push_back(0.0);
      EXPECT_LE(rel_err(polyfit(pts, k + 1).a, padded), 1e-9) << "trial " << trial;
    }
  }
}

TEST(Polyfit, OverParameterisedFitRecoversLowerDegree)
{
  std::vector<Sample> pts;
  for (int r = 0; r < 480; r += 7) {
    pts.push_back({static_cast<double>(r), 300.0 + 0.05 * r + 0.0002 * r * r});
  }
  const auto c = polyfit(pts, 3);
  EXPECT_LE(rel_err(c.a, {300.0, 0.05, 0.0002, 0.0}), 1e-9);
}

TEST(Polyfit, NoisyFitMatchesNormalEquationOracle)
{
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 3.0);
  std::uniform_real_distribution<double> xs(0.0, 480.0);
  for (std::size_t k : {1u, 2u, 3u}) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Sample> pts;
      for (int i = 0; i < 200; ++i) {
        const double x = xs(rng);
        pts.push_back({x, 320.0 - 0.1 * x + 0.0004 * x * x + noise(rng)});
      }
      const auto c = polyfit(pts, k);
      EXPECT_LE(rel_err(c.a, oracle_normal(pts, k)), 1e-6) << "k " << k;
      EXPECT_LE(rel_err(c.a, oracle_qr(pts, k)), 1e-6) << "k " << k;
      EXPECT_LE(normal_equation_residual(pts, c), 1e-6);
    }
  }
}

TEST(Polyfit, ResidualOfExactSolutionIsTiny)
{
  std::vector<Sample> pts;
  for (int i = 0; i < 30; ++i) {
    pts.push_back({16.0 * i, std::sin(i * 0.3)});
  }
  const auto c = polyfit(pts, 3);
  EXPECT_LE(normal_equation_residual(pts, c), 1e-12);
  const PolyCoeffs zero {{0.0, 0.0, 0.0, 0.0}};
  EXPECT_DOUBLE_EQ(normal_equation_residual(pts, zero), 1.0);
}

TEST(Polyfit, TooFewDistinctAbscissae)
{
  const std::vector<Sample> same {{1.0, 1.0}, {1.0, 2.0}, {1.0, 3.0}, {2.0, 0.0}};
  try {
    (void)polyfit(same, 2);
    FAIL();
  } catch (const Error & e) {
    EXPECT_EQ(e.code(), Errc::singular_system);
  }
  const std::vector<Sample> two {{0.0, 0.0}, {1.0, 1.0}};
  EXPECT_THROW((void)polyfit(two, 2), Error);
  EXPECT_NO_THROW((void)polyfit(two, 1));
}

TEST(Polyfit, NonFiniteInputRejected)
{
  const std::vector<Sample> pts {{0.0, 0.0}, {1.0, NAN}, {2.0, 1.0}};
  EXPECT_THROW((void)polyfit(pts, 1), Error);
}

TEST(Polyfit, GaussSolveAgainstEigen)
{
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 8;
    Eigen::MatrixXd m(n, n);
    Eigen::VectorXd b(n);
    std::vector<double> mv;
    std::vector<double> bv;
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        m(r, c) = u(rng);
        mv.push_back(m(r, c));
      }
      b(r) = u(rng);
      bv.push_back(b(r));
    }
    const Eigen::VectorXd want = m.fullPivLu().solve(b);
    const auto got = detail::gauss_solve(mv, bv);
    for (int i = 0; i < n; ++i) {
      EXPECT_NEAR(got[i], want(i), 1e-8 * (1.0 + std::abs(want(i))));
    }
  }
  EXPECT_THROW((void)detail::gauss_solve({1, 2, 2, 4}, {1, 2}), Error);
}

TEST(Polyfit, HornerEvaluation)
{
  const PolyCoeffs p {{5.0, 0.1, 0.001}};
  for (double x : {0.0, 16.0, 464.0}) {
    EXPECT_DOUBLE_EQ(p(x), 5.0 + 0.1 * x + 0.001 * x * x);
  }
  EXPECT_EQ(p.degree(), 2u);
}
