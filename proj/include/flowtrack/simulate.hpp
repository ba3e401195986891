#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowtrack/data_io.hpp"
#include "flowtrack/errors.hpp"
#include "flowtrack/model.hpp"
#include "flowtrack/particle_filter.hpp"
#include "flowtrack/regime_kernel.hpp"

namespace flowtrack {

struct SimulationOutput {
  std::vector<StateVec> true_states;
  std::vector<Regime> true_regimes;
  std::vector<double> measurements;
  std::vector<long long> timestamps;
};

struct SimulationOptions {
  long long start_epoch = 1242172800;  // Wednesday 2009-05-13 00:00 UTC
  long long cadence_seconds = 300;
  std::vector<Eigen::VectorXd> regressors;  // one per step when the model has regressors
};

/// Draws a path from the generative model: a_0 from the regime prior and x_0
/// from the state prior, then a, x and y at each of the T steps.
///
/// Draw order per step: one uniform for the regime, two normals for the
/// evolution noise, one normal for the observation noise. Noise matrices may
/// be singular (including zero), unlike for filtering.
inline SimulationOutput simulate(const ModelSpec& spec, const RegimeKernel& kernel, std::size_t steps,
                                 std::uint64_t seed, const SimulationOptions& options = {}) {
  if (steps < 1) throw Error(ErrorCode::InvalidSpec, "simulate: at least one step is required");
  const bool with_regressors = spec.gamma.size() > 0;
  if (with_regressors && options.regressors.size() != steps)
    throw Error(ErrorCode::DimensionMismatch, "simulate: one regressor vector per step is required");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;

  SimulationOutput out;
  out.true_states.reserve(steps);
  out.true_regimes.reserve(steps);
  out.measurements.reserve(steps);

  Regime alpha = draw_regime(spec.prior_regime_probs, uniform01(rng));
  StateVec x = spec.prior_mean + detail::psd_sqrt2(spec.prior_cov) * StateVec(normal(rng), normal(rng));

  std::vector<double> recent;  // observed speeds, most recent first
  for (std::size_t t = 0; t < steps; ++t) {
    const long long ts_prev = options.start_epoch + static_cast<long long>(t) * options.cadence_seconds;
    ExogenousFeatures z = ExogenousFeatures::at_epoch(ts_prev - options.cadence_seconds);
    z.recent_speeds = recent.empty() ? std::vector<double>{x(0)} : recent;

    alpha = draw_regime(kernel.transition_probs(alpha, z), uniform01(rng));
    const StateVec noise(normal(rng), normal(rng));
    x = evolution_mean(x, alpha, spec) + detail::psd_sqrt2(spec.evolution_cov(alpha)) * noise;
    const double offset = with_regressors ? regressor_effect(spec.gamma, options.regressors[t]) : 0.0;
    const double y = spec.h_row.dot(x) + offset + std::sqrt(spec.obs_variance(alpha)) * normal(rng);

    out.true_states.push_back(x);
    out.true_regimes.push_back(alpha);
    out.measurements.push_back(y);
    out.timestamps.push_back(ts_prev);
    recent.insert(recent.begin(), y);
    if (recent.size() > 3) recent.pop_back();
  }
  return out;
}

/// Measurement records for a simulated path (speed column only; count and
/// occupancy missing), labelled with the true regime.
inline std::vector<MeasurementRecord> to_records(const SimulationOutput& sim, const std::string& sensor_id,
                                                 const std::vector<Eigen::VectorXd>& regressors = {}) {
  std::vector<MeasurementRecord> out(sim.measurements.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t].timestamp = sim.timestamps[t];
    out[t].sensor_id = sensor_id;
    out[t].speed = sim.measurements[t];
    out[t].regime = sim.true_regimes[t];
    if (t < regressors.size())
      out[t].regressors.assign(regressors[t].data(), regressors[t].data() + regressors[t].size());
  }
  return out;
}

}  // namespace flowtrack
