#pragma once

// Conditional sufficient statistics for the static observation parameters
// (V per regime and the regressor coefficients gamma) and their conjugate
// posterior draws. The statistics are propagated per particle from a realized
// state draw; see particle_filter.hpp for the full learning step.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>

#include "flowtrack/errors.hpp"
#include "flowtrack/model.hpp"

namespace flowtrack {

struct ParamSuffStats {
  RegimeArray<double> n{0.0, 0.0, 0.0};   // observation counts per regime
  RegimeArray<double> ss{0.0, 0.0, 0.0};  // sums of squared residuals per regime
  Eigen::MatrixXd lambda;                 // sum of z z'
  Eigen::VectorXd b;                      // sum of z (y - H x)

  static ParamSuffStats empty(Eigen::Index regressors) {
    ParamSuffStats s;
    s.lambda = Eigen::MatrixXd::Zero(regressors, regressors);
    s.b = Eigen::VectorXd::Zero(regressors);
    return s;
  }
};

/// Conjugate priors: V_r ~ InvGamma(v_shape, v_scale), gamma ~ N(gamma_mean, gamma_precision^-1).
struct LearningPriors {
  double v_shape = 2.0;
  double v_scale = 4.0;
  Eigen::VectorXd gamma_mean;
  Eigen::MatrixXd gamma_precision;
};

struct LearningConfig {
  bool learn_obs_var = false;
  bool learn_gamma = false;
  LearningPriors priors;

  [[nodiscard]] bool enabled() const noexcept { return learn_obs_var || learn_gamma; }
};

/// A particle's current draw of the learnable parameters.
struct ParamDraw {
  RegimeArray<double> obs_var{4.0, 4.0, 4.0};
  Eigen::VectorXd gamma;
};

/// Deterministic recursion s_{t+1} = S(s_t, x_{t+1}, y_{t+1}).
inline ParamSuffStats update_suffstats(const ParamSuffStats& ps, const StateVec& x_draw, Regime regime,
                                       double y, const Eigen::VectorXd& z, const Eigen::VectorXd& gamma,
                                       const Eigen::RowVector2d& h_row) {
  if (z.size() != ps.b.size() || gamma.size() != z.size())
    throw Error(ErrorCode::DimensionMismatch, "update_suffstats: regressor dimension mismatch");
  ParamSuffStats out = ps;
  const double innovation = y - h_row.dot(x_draw);
  const double residual = innovation - (z.size() == 0 ? 0.0 : gamma.dot(z));
  const auto r = regime_index(regime);
  out.n[r] += 1.0;
  out.ss[r] += residual * residual;
  if (z.size() > 0) {
    out.lambda.noalias() += z * z.transpose();
    out.b.noalias() += z * innovation;
  }
  return out;
}

/// Throws NonConjugateConfig unless the priors admit the conjugate updates.
inline void validate_priors(const LearningConfig& cfg, const ModelSpec& spec) {
  const auto& p = cfg.priors;
  if (cfg.learn_obs_var && !(p.v_shape > 0.0 && p.v_scale > 0.0))
    throw Error(ErrorCode::NonConjugateConfig, "inverse-gamma prior needs positive shape and scale");
  if (cfg.learn_gamma) {
    const auto k = spec.gamma.size();
    if (k == 0)
      throw Error(ErrorCode::NonConjugateConfig, "gamma learning requested but the model has no regressors");
    if (p.gamma_mean.size() != k || p.gamma_precision.rows() != k || p.gamma_precision.cols() != k)
      throw Error(ErrorCode::NonConjugateConfig, "gamma prior dimensions do not match the regressors");
    Eigen::LLT<Eigen::MatrixXd> llt(p.gamma_precision);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorCode::NonConjugateConfig, "gamma prior precision must be positive definite");
  }
}

/// Default weakly informative priors sized for the model's regressors.
inline LearningPriors default_priors(const ModelSpec& spec) {
  LearningPriors p;
  p.gamma_mean = Eigen::VectorXd::Zero(spec.gamma.size());
  p.gamma_precision = Eigen::MatrixXd::Identity(spec.gamma.size(), spec.gamma.size());
  return p;
}

/// phi ~ p(phi | s).
///
/// V_r ~ InvGamma(a0 + n_r / 2, b0 + ss_r / 2). gamma is then drawn from
/// N(P^-1 (L0 g0 + b / Vbar), P^-1) with P = L0 + Lambda / Vbar, where Vbar
/// is the count-weighted mean of the V draw. Parameters not being learned are
/// copied from `fixed`.
template <typename Rng>
ParamDraw draw_parameters(const ParamSuffStats& ps, const LearningConfig& cfg, const ParamDraw& fixed,
                          Rng& rng) {
  ParamDraw out = fixed;
  const auto& pri = cfg.priors;
  if (cfg.learn_obs_var) {
    for (std::size_t r = 0; r < 3; ++r) {
      const double shape = pri.v_shape + 0.5 * ps.n[r];
      const double rate = pri.v_scale + 0.5 * ps.ss[r];
      std::gamma_distribution<double> gamma(shape, 1.0 / rate);
      out.obs_var[r] = 1.0 / gamma(rng);
    }
  }
  if (cfg.learn_gamma) {
    const double n_total = ps.n[0] + ps.n[1] + ps.n[2];
    double v_bar = 0.0;
    if (n_total > 0.0) {
      for (std::size_t r = 0; r < 3; ++r) v_bar += ps.n[r] * out.obs_var[r];
      v_bar /= n_total;
    } else {
      v_bar = (out.obs_var[0] + out.obs_var[1] + out.obs_var[2]) / 3.0;
    }
    const Eigen::MatrixXd precision = pri.gamma_precision + ps.lambda / v_bar;
    const Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorCode::NonConjugateConfig, "gamma posterior precision is not positive definite");
    const Eigen::VectorXd mean = llt.solve(pri.gamma_precision * pri.gamma_mean + ps.b / v_bar);
    std::normal_distribution<double> normal;
    Eigen::VectorXd eps(mean.size());
    for (Eigen::Index j = 0; j < eps.size(); ++j) eps(j) = normal(rng);
    // Cov = P^-1 = L^-T L^-1, so L^-T eps has the right covariance.
    out.gamma = mean + llt.matrixU().solve(eps);
  }
  return out;
}

}  // namespace flowtrack
