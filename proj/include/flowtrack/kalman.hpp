#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>

#include "flowtrack/errors.hpp"
#include "flowtrack/model.hpp"
#include "flowtrack/regime_kernel.hpp"

namespace flowtrack {

/// Gaussian moments (m, C) of the state given a regime path and the data so far.
struct KalmanStats {
  StateVec m = StateVec::Zero();
  Mat2 C = Mat2::Zero();
};

/// One-step-ahead moments under a chosen regime.
struct Prediction {
  StateVec mf = StateVec::Zero();  // predicted state mean
  Mat2 Cf = Mat2::Zero();          // predicted state covariance
  double y_mean = 0.0;             // predicted observation mean
  double y_var = 0.0;              // predicted observation variance
  double obs_var = 0.0;            // V_a used for this prediction
};

inline KalmanStats prior_stats(const ModelSpec& spec) { return {spec.prior_mean, spec.prior_cov}; }

/// gamma' z, checking dimensions.
inline double regressor_effect(const Eigen::VectorXd& gamma, const Eigen::VectorXd& z) {
  if (gamma.size() != z.size())
    throw Error(ErrorCode::DimensionMismatch,
                "regressor length " + std::to_string(z.size()) + " does not match gamma length " +
                    std::to_string(gamma.size()));
  return gamma.size() == 0 ? 0.0 : gamma.dot(z);
}

/// Prediction with an explicit observation variance and regressor effect.
/// Used directly by particle learning, where V and gamma vary per particle.
inline Prediction predict_with(const KalmanStats& s, Regime regime, double offset, double obs_var,
                               const ModelSpec& spec) {
  const Mat2 g = build_gain(regime, spec);
  Prediction p;
  p.mf = g * s.m + (Mat2::Identity() - g) * spec.reversion_target();
  p.Cf = g * s.C * g.transpose() + spec.evolution_cov(regime);
  p.Cf = 0.5 * (p.Cf + p.Cf.transpose()).eval();
  p.y_mean = spec.h_row.dot(p.mf) + offset;
  // H Cf H' (H is a row vector, so this is a scalar).
  p.y_var = obs_var + spec.h_row * p.Cf * spec.h_row.transpose();
  p.obs_var = obs_var;
  return p;
}

inline Prediction predict(const KalmanStats& s, Regime regime, const Eigen::VectorXd& z,
                          const ModelSpec& spec) {
  return predict_with(s, regime, regressor_effect(spec.gamma, z), spec.obs_variance(regime), spec);
}

/// Measurement update of a prediction with observed speed y (Joseph form).
inline KalmanStats update(const Prediction& pred, double y, const ModelSpec& spec) {
  const Eigen::Vector2d gain = pred.Cf * spec.h_row.transpose() / pred.y_var;
  const Mat2 a = Mat2::Identity() - gain * spec.h_row;
  KalmanStats out;
  out.m = pred.mf + gain * (y - pred.y_mean);
  out.C = a * pred.Cf * a.transpose() + pred.obs_var * gain * gain.transpose();
  out.C = 0.5 * (out.C + out.C.transpose()).eval();
  return out;
}

/// The state moments after a predict-only step (no measurement).
inline KalmanStats without_update(const Prediction& pred) { return {pred.mf, pred.Cf}; }

/// Predict then update: the Kalman recursion operator applied under one regime.
inline KalmanStats kalman_step(const KalmanStats& s, Regime regime, const Eigen::VectorXd& z,
                               double y, const ModelSpec& spec) {
  return update(predict(s, regime, z, spec), y, spec);
}

inline double predictive_loglik(const Prediction& pred, double y) {
  return normal_logpdf(y, pred.y_mean, pred.y_var);
}

/// log p(y | regime, s).
inline double predictive_loglik(const KalmanStats& s, Regime regime, const Eigen::VectorXd& z,
                                double y, const ModelSpec& spec) {
  return predictive_loglik(predict(s, regime, z, spec), y);
}

/// log sum_r probs[r] * exp(logliks[r]); zero-probability components are skipped.
inline double mix_logliks(const RegimeArray<double>& probs, const RegimeArray<double>& logliks) {
  std::array<double, 3> terms;
  for (std::size_t r = 0; r < 3; ++r)
    terms[r] = probs[r] > 0.0 ? std::log(probs[r]) + logliks[r]
                              : -std::numeric_limits<double>::infinity();
  return log_sum_exp(terms);
}

/// Log of the three-component predictive mixture
/// sum_{a'} phi(y; mu_y(a'), V_p(a')) p(a' | alpha_t, Z).
inline double mixture_predictive_loglik(const KalmanStats& s, Regime alpha_t,
                                        const ExogenousFeatures& features, const RegimeKernel& kernel,
                                        const Eigen::VectorXd& z, double y, const ModelSpec& spec) {
  const auto probs = kernel.transition_probs(alpha_t, features);
  RegimeArray<double> ll;
  for (Regime r : kRegimes) ll[regime_index(r)] = predictive_loglik(s, r, z, y, spec);
  return mix_logliks(probs, ll);
}

}  // namespace flowtrack
