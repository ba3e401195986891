#include <gtest/gtest.h>

#include <random>

#include "flowtrack/baselines.hpp"

using namespace flowtrack;
using namespace flowtrack::baselines;

namespace {

// Spreadsheet-style references: every cell recomputed from scratch.
Series brute_mean(const std::vector<double>& y, std::size_t w) {
  Series out(y.size());
  for (std::size_t i = w; i < y.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = i - w; j < i; ++j) s += y[j];
    const double mu = s / static_cast<double>(w);
    if (mu != 0.0) out[i] = (y[i] - mu) / mu;
  }
  return out;
}

Series brute_quantile(const std::vector<double>& y, std::size_t w, double q) {
  Series out(y.size());
  for (std::size_t i = w; i < y.size(); ++i) {
    std::vector<double> win;
    for (std::size_t j = i - w; j < i; ++j) win.push_back(y[j]);
    std::sort(win.begin(), win.end());
    const double h = (static_cast<double>(w) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(h);
    const double qv = lo + 1 < w ? win[lo] + (h - lo) * (win[lo + 1] - win[lo]) : win[lo];
    if (qv != 0.0) out[i] = (y[i] - qv) / qv;
  }
  return out;
}

}  // namespace

TEST(MeanFilter, Examples) {
  const std::vector<double> c(20, 55.0);
  for (const auto& v : mean_filter(c, 6)) EXPECT_TRUE(!v || *v == 0.0);
  const std::vector<double> y{10.0, 10.0, 20.0};
  const auto out = mean_filter(y, 2);
  EXPECT_FALSE(out[0]);
  EXPECT_FALSE(out[1]);
  EXPECT_EQ(*out[2], 1.0);
}

TEST(MeanFilter, WindowTooLong) {
  const std::vector<double> y{1.0, 2.0, 3.0};
  try {
    mean_filter(y, 3);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WindowTooLong);
  }
  EXPECT_THROW(quantile_filter(y, 5), Error);
}

TEST(DiffFilter, Examples) {
  const std::vector<double> c(5, 42.0);
  const auto zc = diff_filter(c);
  EXPECT_FALSE(zc[0]);
  for (std::size_t i = 1; i < zc.size(); ++i) EXPECT_EQ(*zc[i], 0.0);
  const std::vector<double> y{50.0, 55.0};
  EXPECT_DOUBLE_EQ(*diff_filter(y)[1], 0.1);
  const std::vector<double> z{60.0, 0.0, 30.0};
  const auto dz = diff_filter(z);
  EXPECT_DOUBLE_EQ(*dz[1], -1.0);
  EXPECT_FALSE(dz[2]);
}

TEST(QuantileFilter, Examples) {
  const std::vector<double> c(10, 3.0);
  for (const auto& v : quantile_filter(c, 4)) EXPECT_TRUE(!v || *v == 0.0);
  const std::vector<double> odd{10.0, 20.0, 30.0, 20.0};
  EXPECT_EQ(*quantile_filter(odd, 3)[3], 0.0);
  const std::vector<double> even{10.0, 20.0, 30.0};
  EXPECT_EQ(*quantile_filter(even, 2)[2], 1.0);
  EXPECT_EQ(empirical_quantile({1.0, 2.0, 3.0, 4.0}, 0.25), 1.75);
}

TEST(Baselines, MatchBruteForceOnRandomSeries) {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> speed(5.0, 80.0);
  std::uniform_int_distribution<std::size_t> len(12, 300), win(1, 10);
  std::uniform_real_distribution<double> quant(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> y(len(rng));
    for (auto& v : y) v = speed(rng);
    const std::size_t w = win(rng);
    const double q = trial % 2 == 0 ? 0.5 : quant(rng);
    EXPECT_EQ(mean_filter(y, w), brute_mean(y, w));
    EXPECT_EQ(quantile_filter(y, w, q), brute_quantile(y, w, q));
    const auto d = diff_filter(y);
    for (std::size_t i = 1; i < y.size(); ++i) EXPECT_EQ(*d[i], (y[i] - y[i - 1]) / y[i - 1]);
  }
}

TEST(Baselines, ScaleInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> speed(5.0, 80.0);
  std::vector<double> y(200);
  for (auto& v : y) v = speed(rng);
  // Powers of two scale every intermediate exactly.
  for (double c : {0.25, 2.0, 8.0, 1024.0}) {
    std::vector<double> cy(y);
    for (auto& v : cy) v *= c;
    EXPECT_EQ(mean_filter(y, 6), mean_filter(cy, 6));
    EXPECT_EQ(diff_filter(y), diff_filter(cy));
    EXPECT_EQ(quantile_filter(y, 6), quantile_filter(cy, 6));
    EXPECT_EQ(quantile_filter(y, 7, 0.3), quantile_filter(cy, 7, 0.3));
  }
  // Other factors up to rounding.
  for (double c : {0.37, 3.0, 17.5}) {
    std::vector<double> cy(y);
    for (auto& v : cy) v *= c;
    const auto a = mean_filter(y, 6), b = mean_filter(cy, 6);
    for (std::size_t i = 6; i < y.size(); ++i) EXPECT_NEAR(*a[i], *b[i], 1e-12);
  }
}

TEST(Baselines, MeanWithUnitWindowEqualsDiff) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> speed(5.0, 80.0);
  std::vector<double> y(100);
  for (auto& v : y) v = speed(rng);
  const auto m = mean_filter(y, 1), d = diff_filter(y);
  for (std::size_t i = 1; i < y.size(); ++i) EXPECT_EQ(*m[i], *d[i]);
}

TEST(Classify, Thresholds) {
  const Series zeros(10, 0.0);
  for (const auto& r : classify(zeros, -0.1, 0.1)) EXPECT_EQ(*r, Regime::FreeFlow);
  const Series s{std::nullopt, -0.2, 0.05, 0.2};
  const auto c = classify(s, -0.1, 0.1);
  EXPECT_FALSE(c[0]);
  EXPECT_EQ(*c[1], Regime::Breakdown);
  EXPECT_EQ(*c[2], Regime::FreeFlow);
  EXPECT_EQ(*c[3], Regime::Recovery);
  EXPECT_THROW(classify(s, 0.1, 0.2), Error);
}

TEST(Classify, BreakdownRamp) {
  // Steady 60, a linear drop to 30 over ten steps, then steady 30.
  std::vector<double> y;
  for (int i = 0; i < 20; ++i) y.push_back(60.0);
  for (int i = 1; i <= 10; ++i) y.push_back(60.0 - 3.0 * i);
  for (int i = 0; i < 20; ++i) y.push_back(30.0);
  const auto c = classify(mean_filter(y, 6), -0.05, 0.05);
  for (std::size_t i = 6; i < 20; ++i) EXPECT_EQ(*c[i], Regime::FreeFlow);
  for (std::size_t i = 21; i < 30; ++i) EXPECT_EQ(*c[i], Regime::Breakdown) << i;
  for (std::size_t i = 36; i < y.size(); ++i) EXPECT_EQ(*c[i], Regime::FreeFlow);
}
