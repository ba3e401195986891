#pragma once

// Switching dynamic linear model of traffic speed.
//
//   y_{t+1} = H x_{t+1} + gamma' z_{t+1} + v,        v ~ N(0, V_a)
//   x_{t+1} = G_a x_t + (I - G_a) mu + w,            w ~ N(0, W_a)
//   a_{t+1} ~ p(a_{t+1} | a_t, Z_t)
//
// with x = (speed, rate of change), mu = (v_free, 0) and
// G_a = [[F_a, a], [0, 1]], F_a = 1 for a = +-1 and F_a = f0 in free flow.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

#include "flowtrack/errors.hpp"

namespace flowtrack {

using StateVec = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

enum class Regime : int { Breakdown = -1, FreeFlow = 0, Recovery = 1 };

inline constexpr std::array<Regime, 3> kRegimes{Regime::Breakdown, Regime::FreeFlow,
                                                Regime::Recovery};

/// Array slot of a regime: Breakdown -> 0, FreeFlow -> 1, Recovery -> 2.
constexpr std::size_t regime_index(Regime r) noexcept {
  return static_cast<std::size_t>(static_cast<int>(r) + 1);
}

constexpr Regime regime_from_index(std::size_t i) noexcept {
  return static_cast<Regime>(static_cast<int>(i) - 1);
}

constexpr int regime_code(Regime r) noexcept { return static_cast<int>(r); }

inline std::optional<Regime> regime_from_code(int code) noexcept {
  if (code < -1 || code > 1) return std::nullopt;
  return static_cast<Regime>(code);
}

inline std::string_view regime_name(Regime r) noexcept {
  switch (r) {
    case Regime::Breakdown: return "breakdown";
    case Regime::FreeFlow: return "freeflow";
    case Regime::Recovery: return "recovery";
  }
  return "?";
}

inline std::optional<Regime> parse_regime(std::string_view text) noexcept {
  if (text == "breakdown" || text == "-1") return Regime::Breakdown;
  if (text == "freeflow" || text == "free-flow" || text == "0") return Regime::FreeFlow;
  if (text == "recovery" || text == "1" || text == "+1") return Regime::Recovery;
  return std::nullopt;
}

/// Per-regime storage indexed by regime_index().
template <typename T>
using RegimeArray = std::array<T, 3>;

struct ModelSpec {
  Eigen::RowVector2d h_row{1.0, 0.0};
  double f0 = 0.5;
  double v_free = 63.0;
  Eigen::VectorXd gamma;  // regressor coefficients; empty when no regressors
  RegimeArray<double> obs_var{4.0, 4.0, 4.0};
  RegimeArray<Mat2> evo_cov;
  StateVec prior_mean{63.0, 0.0};
  Mat2 prior_cov;
  RegimeArray<double> prior_regime_probs{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

  ModelSpec() {
    Mat2 w;
    w << 1.9, 0.0, 0.0, 4.5;
    evo_cov = {w, w, w};
    prior_cov << 25.0, 0.0, 0.0, 4.5;
  }

  [[nodiscard]] double obs_variance(Regime r) const { return obs_var[regime_index(r)]; }
  [[nodiscard]] const Mat2& evolution_cov(Regime r) const { return evo_cov[regime_index(r)]; }
  [[nodiscard]] StateVec reversion_target() const { return {v_free, 0.0}; }

  /// Throws Error(InvalidSpec) describing the first violated constraint.
  void validate() const;
};

namespace detail {

inline bool is_symmetric_psd(const Mat2& m, double tol = 1e-10) {
  if (!m.allFinite()) return false;
  if (std::abs(m(0, 1) - m(1, 0)) > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff())) return false;
  Eigen::SelfAdjointEigenSolver<Mat2> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol;
}

}  // namespace detail

inline void ModelSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidSpec, msg); };
  if (!h_row.allFinite()) fail("observation row must be finite");
  if (!(f0 > 0.0 && f0 < 1.0)) fail("f0 must lie in (0, 1), got " + std::to_string(f0));
  if (!(v_free > 0.0) || !std::isfinite(v_free)) fail("v_free must be positive");
  if (!gamma.allFinite()) fail("gamma must be finite");
  for (Regime r : kRegimes) {
    const auto name = std::string(regime_name(r));
    if (!(obs_variance(r) > 0.0) || !std::isfinite(obs_variance(r)))
      fail("obs_var for " + name + " must be positive");
    if (!detail::is_symmetric_psd(evolution_cov(r)))
      fail("evo_cov for " + name + " must be symmetric PSD");
  }
  if (!prior_mean.allFinite()) fail("prior_mean must be finite");
  if (!detail::is_symmetric_psd(prior_cov)) fail("prior_cov must be symmetric PSD");
  double total = 0.0;
  for (double p : prior_regime_probs) {
    if (!(p >= 0.0)) fail("prior_regime_probs entries must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) fail("prior_regime_probs must sum to 1");
}

/// Evolution gain G_a.
inline Mat2 build_gain(Regime regime, const ModelSpec& spec) {
  const double f = regime == Regime::FreeFlow ? spec.f0 : 1.0;
  Mat2 g;
  g << f, static_cast<double>(regime_code(regime)), 0.0, 1.0;
  return g;
}

/// G_a x + (I - G_a) mu.
inline StateVec evolution_mean(const StateVec& x, Regime regime, const ModelSpec& spec) {
  const Mat2 g = build_gain(regime, spec);
  return g * x + (Mat2::Identity() - g) * spec.reversion_target();
}

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// Scalar normal log-density.
inline double normal_logpdf(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (kLogTwoPi + std::log(var) + r * r / var);
}

/// Log of the k-variate normal density phi(x; mean, cov).
///
/// The covariance is factorized as given. If that fails it is retried once
/// with 1e-9 * trace(cov) / k added to the diagonal; a second failure raises
/// NonPositiveDefinite.
inline double gaussian_logdensity(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                                  const Eigen::MatrixXd& cov) {
  const auto k = x.size();
  if (mean.size() != k || cov.rows() != k || cov.cols() != k)
    throw Error(ErrorCode::DimensionMismatch, "gaussian_logdensity: inconsistent dimensions");

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    Eigen::MatrixXd jittered = cov;
    const double jitter = 1e-9 * cov.trace() / static_cast<double>(k);
    jittered.diagonal().array() += jitter;
    llt.compute(jittered);
    if (llt.info() != Eigen::Success || !(jitter > 0.0))
      throw Error(ErrorCode::NonPositiveDefinite, "covariance is not positive definite");
  }
  const Eigen::VectorXd u = llt.matrixL().solve(x - mean);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(k) * kLogTwoPi + log_det + u.squaredNorm());
}

/// log(sum(exp(v))) over the finite entries; -inf if there are none.
template <typename Range>
double log_sum_exp(const Range& values) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

}  // namespace flowtrack
