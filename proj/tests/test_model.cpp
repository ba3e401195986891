#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "flowtrack/model.hpp"
#include "support/oracles.hpp"

using namespace flowtrack;

TEST(Regime, CodesRoundTrip) {
  EXPECT_EQ(kRegimes.size(), 3u);
  for (Regime r : kRegimes) {
    EXPECT_EQ(regime_from_code(regime_code(r)), r);
    EXPECT_EQ(regime_from_index(regime_index(r)), r);
    EXPECT_EQ(parse_regime(regime_name(r)), r);
  }
  EXPECT_EQ(regime_code(Regime::Breakdown), -1);
  EXPECT_EQ(regime_code(Regime::FreeFlow), 0);
  EXPECT_EQ(regime_code(Regime::Recovery), 1);
  EXPECT_FALSE(regime_from_code(2).has_value());
  EXPECT_FALSE(parse_regime("jam").has_value());
}

TEST(ModelSpec, DefaultsValidate) {
  ModelSpec spec;
  EXPECT_NO_THROW(spec.validate());
  EXPECT_EQ(spec.f0, 0.5);
  EXPECT_EQ(spec.v_free, 63.0);
  EXPECT_EQ(spec.obs_variance(Regime::FreeFlow), 4.0);
  EXPECT_EQ(spec.evolution_cov(Regime::Recovery)(1, 1), 4.5);
}

TEST(ModelSpec, RejectsInvalid) {
  auto expect_invalid = [](auto mutate) {
    ModelSpec spec;
    mutate(spec);
    try {
      spec.validate();
      ADD_FAILURE() << "expected InvalidSpec";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidSpec);
    }
  };
  expect_invalid([](ModelSpec& s) { s.f0 = 1.0; });
  expect_invalid([](ModelSpec& s) { s.f0 = 0.0; });
  expect_invalid([](ModelSpec& s) { s.obs_var[1] = 0.0; });
  expect_invalid([](ModelSpec& s) { s.evo_cov[0](0, 1) = 0.3; });
  expect_invalid([](ModelSpec& s) { s.evo_cov[2] << 1.0, 2.0, 2.0, 1.0; });
  expect_invalid([](ModelSpec& s) { s.prior_cov(0, 0) = -1.0; });
  expect_invalid([](ModelSpec& s) { s.prior_regime_probs = {0.5, 0.5, 0.1}; });
  expect_invalid([](ModelSpec& s) { s.prior_regime_probs = {-0.1, 0.6, 0.5}; });
}

TEST(BuildGain, MatchesDefinition) {
  ModelSpec spec;
  Mat2 ff, rec, brk;
  ff << 0.5, 0.0, 0.0, 1.0;
  rec << 1.0, 1.0, 0.0, 1.0;
  brk << 1.0, -1.0, 0.0, 1.0;
  EXPECT_EQ(build_gain(Regime::FreeFlow, spec), ff);
  EXPECT_EQ(build_gain(Regime::Recovery, spec), rec);
  EXPECT_EQ(build_gain(Regime::Breakdown, spec), brk);
  spec.f0 = 0.83;
  EXPECT_EQ(build_gain(Regime::Recovery, spec), rec);
  for (Regime r : kRegimes) {
    EXPECT_EQ(build_gain(r, spec)(1, 0), 0.0);
    EXPECT_EQ(build_gain(r, spec)(1, 1), 1.0);
  }
}

TEST(EvolutionMean, Examples) {
  ModelSpec spec;
  EXPECT_EQ(evolution_mean(StateVec(63.0, 0.0), Regime::FreeFlow, spec), StateVec(63.0, 0.0));
  EXPECT_EQ(evolution_mean(StateVec(50.0, 2.0), Regime::Recovery, spec), StateVec(52.0, 2.0));
  // 0.5 * 40 + 0.5 * 63
  EXPECT_DOUBLE_EQ(evolution_mean(StateVec(40.0, 0.0), Regime::FreeFlow, spec)(0), 51.5);
  EXPECT_EQ(evolution_mean(StateVec(40.0, 0.0), Regime::FreeFlow, spec)(1), 0.0);
}

TEST(EvolutionMean, AffineAndReducesToGainForTrend) {
  ModelSpec spec;
  spec.f0 = 0.37;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50.0, 100.0);
  const Eigen::Vector2d mu(spec.v_free, 0.0);
  for (int i = 0; i < 200; ++i) {
    const StateVec x(u(rng), u(rng)), y(u(rng), u(rng));
    const double a = u(rng) / 50.0;
    for (Regime r : kRegimes) {
      const Eigen::Matrix2d g = oracle::gain(regime_code(r), spec.f0);
      const StateVec direct = g * x + (Eigen::Matrix2d::Identity() - g) * mu;
      EXPECT_NEAR((evolution_mean(x, r, spec) - direct).norm(), 0.0, 1e-12);
      // f(a x + (1 - a) y) = a f(x) + (1 - a) f(y) for an affine map.
      const StateVec lhs = evolution_mean(a * x + (1.0 - a) * y, r, spec);
      const StateVec rhs = a * evolution_mean(x, r, spec) + (1.0 - a) * evolution_mean(y, r, spec);
      EXPECT_NEAR((lhs - rhs).norm(), 0.0, 1e-10);
      if (r != Regime::FreeFlow) EXPECT_EQ(evolution_mean(x, r, spec), StateVec(g * x));
    }
  }
}

TEST(GaussianLogDensity, Examples) {
  Eigen::VectorXd zero1 = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd one = Eigen::MatrixXd::Identity(1, 1);
  EXPECT_NEAR(gaussian_logdensity(zero1, zero1, one), -0.9189385332046727, 1e-15);

  Eigen::VectorXd m(2);
  m << 3.0, -7.0;
  EXPECT_NEAR(gaussian_logdensity(m, m, Eigen::MatrixXd::Identity(2, 2)), -std::log(2.0 * std::numbers::pi), 1e-14);

  Eigen::Vector2d x(1.0, 2.0);
  Eigen::Matrix2d c;
  c << 2.0, 0.5, 0.5, 1.0;
  const double expected = oracle::logpdf2_explicit(x, Eigen::Vector2d::Zero(), c);
  EXPECT_NEAR(gaussian_logdensity(x, Eigen::VectorXd::Zero(2), c), expected, 1e-13);
}

TEST(GaussianLogDensity, MatchesExplicitInverseOnRandomCases) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 500; ++i) {
    Eigen::Matrix2d a;
    a << n01(rng), n01(rng), n01(rng), n01(rng);
    const Eigen::Matrix2d c = a * a.transpose() + 0.1 * Eigen::Matrix2d::Identity();
    const Eigen::Vector2d x(n01(rng), n01(rng)), mu(n01(rng), n01(rng));
    EXPECT_NEAR(gaussian_logdensity(x, mu, c), oracle::logpdf2_explicit(x, mu, c), 1e-10);
  }
}

TEST(GaussianLogDensity, IntegratesToOne) {
  // k = 1 on a fine grid
  Eigen::VectorXd mean(1), cov(1);
  mean << 1.5;
  const Eigen::MatrixXd var = Eigen::MatrixXd::Constant(1, 1, 2.3);
  double s1 = 0.0;
  const double h1 = 0.001;
  for (double x = -20.0; x <= 23.0; x += h1) {
    Eigen::VectorXd v(1);
    v << x;
    s1 += std::exp(gaussian_logdensity(v, mean, var)) * h1;
  }
  EXPECT_NEAR(s1, 1.0, 1e-4);

  // k = 2 with correlation
  Eigen::Matrix2d c;
  c << 2.0, 0.6, 0.6, 1.0;
  const Eigen::Vector2d mu(0.5, -0.5);
  double s2 = 0.0;
  const double h2 = 0.02;
  for (double x = -12.0; x <= 12.0; x += h2)
    for (double y = -10.0; y <= 10.0; y += h2)
      s2 += std::exp(gaussian_logdensity(Eigen::Vector2d(x, y), mu, c)) * h2 * h2;
  EXPECT_NEAR(s2, 1.0, 1e-4);
}

TEST(GaussianLogDensity, SingularAndInvalid) {
  // Exactly singular but PSD: jitter rescues it.
  Eigen::Matrix2d c;
  c << 1.0, 1.0, 1.0, 1.0;
  EXPECT_TRUE(std::isfinite(gaussian_logdensity(Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d::Zero(), c)));

  Eigen::Matrix2d neg;
  neg << -1.0, 0.0, 0.0, 1.0;
  try {
    gaussian_logdensity(Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), neg);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveDefinite);
  }
  try {
    gaussian_logdensity(Eigen::Vector2d::Zero(), Eigen::VectorXd::Zero(3), neg);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(LogSumExp, StableForLargeMagnitudes) {
  const std::array<double, 3> v{-1000.0, -1000.0, -1e300};
  EXPECT_NEAR(log_sum_exp(v), -1000.0 + std::log(2.0), 1e-12);
  const std::array<double, 2> none{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  EXPECT_EQ(log_sum_exp(none), -std::numeric_limits<double>::infinity());
}
