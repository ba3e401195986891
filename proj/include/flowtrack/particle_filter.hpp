#pragma once

// Rao-Blackwellized resample-propagate particle filter for the switching
// speed model. Each particle carries a regime and the Gaussian moments of the
// state conditional on its regime path, so only the discrete regime is
// sampled; the state is integrated out by the Kalman recursions.
//
// Per observation y_{t+1}:
//   1. every particle's weight is multiplied by its 3-component predictive
//      mixture p(y | a_t, s_t) and ancestors are resampled from the result;
//   2. each child draws a_{t+1} from p(a_{t+1} | a_t, Z, y) ("adapted") or
//      from p(a_{t+1} | a_t, Z) ("prior", importance-corrected afterwards);
//   3. the child's moments are the Kalman update under the drawn regime.
//
// Random numbers come from one 64-bit Mersenne twister seeded with the run
// seed and are consumed serially in a fixed order per step: N uniforms for
// ancestor selection (one for systematic resampling), N uniforms for regime
// draws, then learning draws particle by particle. Per-particle arithmetic may
// run on several threads; results do not depend on the thread count.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "flowtrack/errors.hpp"
#include "flowtrack/kalman.hpp"
#include "flowtrack/model.hpp"
#include "flowtrack/particle_learning.hpp"
#include "flowtrack/regime_kernel.hpp"

namespace flowtrack {

enum class PropagationMode { Adapted, Prior };
enum class ResamplingScheme { Multinomial, Systematic };

struct FilterOptions {
  std::size_t particles = 10000;
  std::uint64_t seed = 0;
  PropagationMode mode = PropagationMode::Adapted;
  ResamplingScheme resampling = ResamplingScheme::Multinomial;
  int threads = 1;
  LearningConfig learning;
};

struct LearnedParams {
  ParamSuffStats stats;
  ParamDraw draw;
};

struct Particle {
  Regime regime = Regime::FreeFlow;
  KalmanStats stats;
  double weight = 0.0;
  std::optional<LearnedParams> learned;
};

struct ParamSummary {
  RegimeArray<double> v_mean{0.0, 0.0, 0.0};
  RegimeArray<double> v_sd{0.0, 0.0, 0.0};
  Eigen::VectorXd gamma_mean;
  Eigen::VectorXd gamma_sd;
};

struct PosteriorSummary {
  std::size_t t = 0;
  double mean_speed = 0.0;
  double mean_rate = 0.0;
  std::array<double, 3> speed_quantiles{0.0, 0.0, 0.0};  // 5%, 50%, 95%
  RegimeArray<double> regime_probs{0.0, 0.0, 0.0};
  double ess = 0.0;
  std::optional<ParamSummary> params;
};

struct FilterState {
  ModelSpec spec;
  std::shared_ptr<const RegimeKernel> kernel;
  FilterOptions options;
  std::size_t t = 0;
  std::vector<Particle> particles;
  std::mt19937_64 rng;
  double log_marginal_lik = 0.0;

  // Per-step scratch, reused across steps.
  struct Workspace {
    std::vector<std::array<Prediction, 3>> preds;
    std::vector<RegimeArray<double>> logliks;
    std::vector<double> log_mix;
    std::vector<double> cumulative;
    std::vector<std::size_t> ancestors;
    std::vector<double> uniforms;
    std::vector<Particle> next;
  } work;
};

inline double effective_sample_size(std::span<const double> weights) {
  double s = 0.0;
  for (double w : weights) s += w * w;
  return 1.0 / s;
}

inline double effective_sample_size(const std::vector<Particle>& particles) {
  double s = 0.0;
  for (const auto& p : particles) s += p.weight * p.weight;
  return 1.0 / s;
}

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
#ifdef _OPENMP
  if (threads > 1) {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for num_threads(threads) schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
    return;
  }
#else
  (void)threads;
#endif
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

inline ParamDraw fixed_params(const ModelSpec& spec) {
  ParamDraw d;
  d.obs_var = spec.obs_var;
  d.gamma = spec.gamma;
  return d;
}

/// Lower-triangular square root of a 2x2 PSD matrix; tolerates singular input.
inline Mat2 psd_sqrt2(const Mat2& c) {
  Mat2 l = Mat2::Zero();
  const double l00 = std::sqrt(std::max(c(0, 0), 0.0));
  l(0, 0) = l00;
  l(1, 0) = l00 > 0.0 ? c(1, 0) / l00 : 0.0;
  l(1, 1) = std::sqrt(std::max(c(1, 1) - l(1, 0) * l(1, 0), 0.0));
  return l;
}

template <typename Rng>
StateVec draw_state(const KalmanStats& s, Rng& rng) {
  std::normal_distribution<double> normal;
  const double e0 = normal(rng);
  const double e1 = normal(rng);
  return s.m + psd_sqrt2(s.C) * StateVec(e0, e1);
}

// Standard normal CDF.
/// Neumaier-compensated running sum.
class CompensatedSum {
public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  [[nodiscard]] double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct SpeedComponent {
  double mean;
  double var;
  double weight;
};

/// Quantile of a 1-D Gaussian mixture by safeguarded Newton iteration
/// inside a bisection bracket.
inline double mixture_quantile(const std::vector<SpeedComponent>& comps, double prob) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& c : comps) {
    const double sd = std::sqrt(c.var);
    lo = std::min(lo, c.mean - 12.0 * sd);
    hi = std::max(hi, c.mean + 12.0 * sd);
  }
  auto cdf_pdf = [&](double x) {
    double f = 0.0, p = 0.0;
    for (const auto& c : comps) {
      if (c.var > 0.0) {
        const double sd = std::sqrt(c.var);
        const double zz = (x - c.mean) / sd;
        f += c.weight * norm_cdf(zz);
        p += c.weight * std::exp(-0.5 * zz * zz) / (sd * 2.5066282746310002);
      } else if (x >= c.mean) {
        f += c.weight;
      }
    }
    return std::pair{f, p};
  };
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200 && hi - lo > 1e-10 * (1.0 + std::abs(x)); ++it) {
    const auto [f, p] = cdf_pdf(x);
    if (f < prob)
      lo = x;
    else
      hi = x;
    double next = p > 0.0 ? x - (f - prob) / p : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) < 1e-12 * (1.0 + std::abs(x))) {
      x = next;
      break;
    }
    x = next;
  }
  return x;
}

inline void check_ready(const FilterState& state) {
  if (state.particles.empty() || !state.kernel)
    throw Error(ErrorCode::InvalidSpec, "filter state is not initialized");
}

}  // namespace detail

/// N particles with regimes drawn from the prior, prior moments and weights 1/N.
inline FilterState init(const ModelSpec& spec, std::shared_ptr<const RegimeKernel> kernel,
                        FilterOptions options) {
  spec.validate();
  if (options.particles < 1) throw Error(ErrorCode::InvalidSpec, "particle count must be at least 1");
  if (!kernel) throw Error(ErrorCode::InvalidSpec, "a regime kernel is required");
  if (options.threads < 1) throw Error(ErrorCode::InvalidSpec, "thread count must be at least 1");
  if (options.learning.enabled()) validate_priors(options.learning, spec);

  FilterState state;
  state.spec = spec;
  state.kernel = std::move(kernel);
  state.options = options;
  state.rng.seed(options.seed);

  const auto n = options.particles;
  state.particles.resize(n);
  const double w = 1.0 / static_cast<double>(n);
  for (auto& p : state.particles) {
    p.regime = draw_regime(spec.prior_regime_probs, uniform01(state.rng));
    p.stats = prior_stats(spec);
    p.weight = w;
  }
  if (options.learning.enabled()) {
    const ParamDraw fixed = detail::fixed_params(spec);
    for (auto& p : state.particles) {
      LearnedParams lp;
      lp.stats = ParamSuffStats::empty(spec.gamma.size());
      lp.draw = draw_parameters(lp.stats, options.learning, fixed, state.rng);
      p.learned = std::move(lp);
    }
  }
  return state;
}

inline FilterState init(const ModelSpec& spec, const RegimeKernel& kernel, std::size_t particles,
                        std::uint64_t seed) {
  FilterOptions opt;
  opt.particles = particles;
  opt.seed = seed;
  return init(spec, std::make_shared<const RegimeKernel>(kernel), opt);
}

/// Weighted posterior summary of the current particle set.
inline PosteriorSummary summarize(const FilterState& state) {
  PosteriorSummary out;
  out.t = state.t;
  std::vector<detail::SpeedComponent> comps;
  comps.reserve(state.particles.size());
  // Means are accumulated as offsets from the first particle with compensated
  // sums, so a set of identical particles reproduces its common mean exactly.
  const StateVec ref = state.particles.empty() ? StateVec::Zero() : state.particles.front().stats.m;
  detail::CompensatedSum speed_sum, rate_sum;
  for (const auto& p : state.particles) {
    out.regime_probs[regime_index(p.regime)] += p.weight;
    speed_sum.add(p.weight * (p.stats.m(0) - ref(0)));
    rate_sum.add(p.weight * (p.stats.m(1) - ref(1)));
    comps.push_back({p.stats.m(0), std::max(p.stats.C(0, 0), 0.0), p.weight});
  }
  out.mean_speed = ref(0) + speed_sum.value();
  out.mean_rate = ref(1) + rate_sum.value();
  out.ess = effective_sample_size(state.particles);

  // Identical particles (same ancestor and regime) share one component.
  std::sort(comps.begin(), comps.end(), [](const auto& a, const auto& b) {
    return a.mean < b.mean || (a.mean == b.mean && a.var < b.var);
  });
  std::vector<detail::SpeedComponent> merged;
  for (const auto& c : comps) {
    if (!merged.empty() && merged.back().mean == c.mean && merged.back().var == c.var)
      merged.back().weight += c.weight;
    else
      merged.push_back(c);
  }
  const std::array<double, 3> probs{0.05, 0.5, 0.95};
  for (std::size_t q = 0; q < 3; ++q) out.speed_quantiles[q] = detail::mixture_quantile(merged, probs[q]);
  for (std::size_t q = 1; q < 3; ++q)
    out.speed_quantiles[q] = std::max(out.speed_quantiles[q], out.speed_quantiles[q - 1]);

  if (!state.particles.empty() && state.particles.front().learned) {
    ParamSummary ps;
    const auto k = state.spec.gamma.size();
    // Two passes: weighted means, then weighted squared deviations.
    Eigen::VectorXd g1 = Eigen::VectorXd::Zero(k), g2 = Eigen::VectorXd::Zero(k);
    RegimeArray<double> v2{0.0, 0.0, 0.0};
    for (const auto& p : state.particles) {
      const auto& d = p.learned->draw;
      for (std::size_t r = 0; r < 3; ++r) ps.v_mean[r] += p.weight * d.obs_var[r];
      if (k > 0) g1 += p.weight * d.gamma;
    }
    for (const auto& p : state.particles) {
      const auto& d = p.learned->draw;
      for (std::size_t r = 0; r < 3; ++r) v2[r] += p.weight * (d.obs_var[r] - ps.v_mean[r]) * (d.obs_var[r] - ps.v_mean[r]);
      if (k > 0) g2 += p.weight * (d.gamma - g1).cwiseAbs2();
    }
    for (std::size_t r = 0; r < 3; ++r) ps.v_sd[r] = std::sqrt(v2[r]);
    ps.gamma_mean = g1;
    ps.gamma_sd = g2.cwiseSqrt();
    out.params = std::move(ps);
  }
  return out;
}

/// Assimilate one observation. A non-finite y performs a predict-only step.
/// Throws AllWeightsZero if every predictive likelihood underflows.
inline PosteriorSummary step(FilterState& state, double y, const Eigen::VectorXd& z,
                             const ExogenousFeatures& features) {
  detail::check_ready(state);
  const auto& spec = state.spec;
  const auto n = state.particles.size();
  const bool learning = state.particles.front().learned.has_value();
  auto& w = state.work;
  const double offset_default = regressor_effect(spec.gamma, z);

  RegimeArray<RegimeArray<double>> rows;
  for (Regime r : kRegimes) rows[regime_index(r)] = state.kernel->transition_probs(r, features);

  w.preds.resize(n);
  w.logliks.resize(n);
  w.log_mix.resize(n);
  const bool observed = std::isfinite(y);

  detail::parallel_for(n, state.options.threads, [&](std::size_t i) {
    const auto& p = state.particles[i];
    for (Regime r : kRegimes) {
      const auto ri = regime_index(r);
      double offset = offset_default;
      double v = spec.obs_var[ri];
      if (p.learned) {
        v = p.learned->draw.obs_var[ri];
        if (z.size() > 0) offset = p.learned->draw.gamma.dot(z);
      }
      w.preds[i][ri] = predict_with(p.stats, r, offset, v, spec);
      if (observed) w.logliks[i][ri] = predictive_loglik(w.preds[i][ri], y);
    }
    if (observed) w.log_mix[i] = mix_logliks(rows[regime_index(p.regime)], w.logliks[i]);
  });

  w.next.resize(n);
  w.uniforms.resize(n);

  if (!observed) {
    for (std::size_t i = 0; i < n; ++i) w.uniforms[i] = uniform01(state.rng);
    detail::parallel_for(n, state.options.threads, [&](std::size_t i) {
      const auto& p = state.particles[i];
      auto& c = w.next[i];
      c.regime = draw_regime(rows[regime_index(p.regime)], w.uniforms[i]);
      c.stats = without_update(w.preds[i][regime_index(c.regime)]);
      c.weight = p.weight;
      c.learned = p.learned;
    });
    std::swap(state.particles, w.next);
    ++state.t;
    return summarize(state);
  }

  // Resampling weights w_i * p(y | a_i, s_i), in log space.
  w.cumulative.resize(n);
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double lw = std::log(state.particles[i].weight) + w.log_mix[i];
    w.cumulative[i] = lw;
    hi = std::max(hi, lw);
  }
  if (!std::isfinite(hi))
    throw Error(ErrorCode::AllWeightsZero, "all predictive likelihoods underflow at step " +
                                               std::to_string(state.t + 1) + " (y = " + std::to_string(y) + ")");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += std::exp(w.cumulative[i] - hi);
    w.cumulative[i] = acc;
  }
  state.log_marginal_lik += hi + std::log(acc);

  w.ancestors.resize(n);
  if (state.options.resampling == ResamplingScheme::Systematic) {
    const double u0 = uniform01(state.rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double target = (static_cast<double>(i) + u0) / static_cast<double>(n) * acc;
      const auto it = std::upper_bound(w.cumulative.begin(), w.cumulative.end(), target);
      w.ancestors[i] = std::min<std::size_t>(static_cast<std::size_t>(it - w.cumulative.begin()), n - 1);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double target = uniform01(state.rng) * acc;
      const auto it = std::upper_bound(w.cumulative.begin(), w.cumulative.end(), target);
      w.ancestors[i] = std::min<std::size_t>(static_cast<std::size_t>(it - w.cumulative.begin()), n - 1);
    }
  }
  for (std::size_t i = 0; i < n; ++i) w.uniforms[i] = uniform01(state.rng);

  const bool adapted = state.options.mode == PropagationMode::Adapted;
  detail::parallel_for(n, state.options.threads, [&](std::size_t i) {
    const std::size_t k = w.ancestors[i];
    const auto& parent = state.particles[k];
    const auto& row = rows[regime_index(parent.regime)];
    RegimeArray<double> probs = row;
    if (adapted)
      for (std::size_t r = 0; r < 3; ++r)
        probs[r] = row[r] > 0.0 ? row[r] * std::exp(w.logliks[k][r] - w.log_mix[k]) : 0.0;
    auto& c = w.next[i];
    c.regime = draw_regime(probs, w.uniforms[i]);
    const auto ri = regime_index(c.regime);
    c.stats = update(w.preds[k][ri], y, spec);
    // Prior mode corrects for proposing from the transition kernel alone.
    c.weight = adapted ? 1.0 : std::exp(w.logliks[k][ri] - w.log_mix[k]);
    c.learned = parent.learned;
  });

  double total = 0.0;
  for (const auto& c : w.next) total += c.weight;
  for (auto& c : w.next) c.weight /= total;

  if (learning) {
    const ParamDraw fixed = detail::fixed_params(spec);
    for (auto& c : w.next) {
      const StateVec x = detail::draw_state(c.stats, state.rng);
      auto& lp = *c.learned;
      lp.stats = update_suffstats(lp.stats, x, c.regime, y, z, lp.draw.gamma, spec.h_row);
      lp.draw = draw_parameters(lp.stats, state.options.learning, fixed, state.rng);
    }
  }

  std::swap(state.particles, w.next);
  ++state.t;
  return summarize(state);
}

inline PosteriorSummary step(FilterState& state, double y) {
  return step(state, y, Eigen::VectorXd(), ExogenousFeatures{});
}

/// Particle-learning step: resample, propagate regime and moments, draw a
/// state per particle, update the parameter statistics, then redraw the
/// parameters. Learning is switched on by FilterOptions::learning at init;
/// without it this is exactly step().
inline PosteriorSummary learning_step(FilterState& state, double y, const Eigen::VectorXd& z,
                                      const ExogenousFeatures& features) {
  return step(state, y, z, features);
}

/// Draws from the filtered state mixture: an ancestor by weight, then a
/// Gaussian draw from its moments.
template <typename Rng>
std::vector<StateVec> sample_states(const FilterState& state, std::size_t n_draws, Rng& rng) {
  detail::check_ready(state);
  std::vector<double> cumulative(state.particles.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < state.particles.size(); ++i) {
    acc += state.particles[i].weight;
    cumulative[i] = acc;
  }
  std::vector<StateVec> out;
  out.reserve(n_draws);
  for (std::size_t d = 0; d < n_draws; ++d) {
    const double target = uniform01(rng) * acc;
    auto idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), target) -
                                        cumulative.begin());
    idx = std::min(idx, state.particles.size() - 1);
    out.push_back(detail::draw_state(state.particles[idx].stats, rng));
  }
  return out;
}

}  // namespace flowtrack
