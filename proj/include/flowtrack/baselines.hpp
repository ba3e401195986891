#pragma once

// Naive comparison filters. Each maps a speed series to a relative deviation
// from a trailing-window reference; the first `window` steps (or the first
// step for the difference filter) have no reference and are left empty.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowtrack/errors.hpp"
#include "flowtrack/model.hpp"

namespace flowtrack::baselines {

/// Relative deviation per step; std::nullopt marks warmup or undefined steps.
using Series = std::vector<std::optional<double>>;

namespace detail {

inline void check_window(std::size_t window, std::size_t length) {
  if (window < 1) throw Error(ErrorCode::InvalidSpec, "window must be at least 1");
  if (window >= length)
    throw Error(ErrorCode::WindowTooLong, "window " + std::to_string(window) +
                                              " is not shorter than the series (" +
                                              std::to_string(length) + ")");
}

inline std::optional<double> ratio(double y, double ref) {
  if (ref == 0.0 || !std::isfinite(ref) || !std::isfinite(y)) return std::nullopt;
  return (y - ref) / ref;
}

}  // namespace detail

/// (y_i - mu_i) / mu_i with mu_i the mean of the previous `window` values.
inline Series mean_filter(std::span<const double> y, std::size_t window) {
  detail::check_window(window, y.size());
  Series out(y.size());
  for (std::size_t i = window; i < y.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = i - window; j < i; ++j) sum += y[j];
    out[i] = detail::ratio(y[i], sum / static_cast<double>(window));
  }
  return out;
}

/// (y_i - y_{i-1}) / y_{i-1}.
inline Series diff_filter(std::span<const double> y) {
  Series out(y.size());
  for (std::size_t i = 1; i < y.size(); ++i) out[i] = detail::ratio(y[i], y[i - 1]);
  return out;
}

/// Empirical q-quantile of `values` with linear interpolation between order statistics.
inline double empirical_quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

/// (y_i - Q_i) / Q_i with Q_i the q-quantile of the previous `window` values.
inline Series quantile_filter(std::span<const double> y, std::size_t window, double q = 0.5) {
  detail::check_window(window, y.size());
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidSpec, "quantile must lie in [0, 1]");
  Series out(y.size());
  for (std::size_t i = window; i < y.size(); ++i) {
    std::vector<double> win(y.begin() + static_cast<std::ptrdiff_t>(i - window),
                            y.begin() + static_cast<std::ptrdiff_t>(i));
    out[i] = detail::ratio(y[i], empirical_quantile(std::move(win), q));
  }
  return out;
}

/// Threshold classification of a deviation series; empty steps stay empty.
inline std::vector<std::optional<Regime>> classify(const Series& series, double down_threshold,
                                                   double up_threshold) {
  if (!(down_threshold < 0.0 && up_threshold > 0.0))
    throw Error(ErrorCode::InvalidSpec, "thresholds must satisfy down < 0 < up");
  std::vector<std::optional<Regime>> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!series[i]) continue;
    const double v = *series[i];
    out[i] = v < down_threshold ? Regime::Breakdown : v > up_threshold ? Regime::Recovery : Regime::FreeFlow;
  }
  return out;
}

}  // namespace flowtrack::baselines
