#pragma once

// Switching kernels p(a_{t+1} | a_t, Z_t): a fixed 3x3 matrix, a lookup of
// matrices keyed by (period, day of week), and a k-nearest-neighbour
// empirical kernel over a labelled history.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "flowtrack/errors.hpp"
#include "flowtrack/model.hpp"

namespace flowtrack {

enum class DayOfWeek : int { Monday = 0, Tuesday, Wednesday, Thursday, Friday, Saturday, Sunday };
enum class Period : int { MorningPeak = 0, EveningPeak, OffPeak };

inline constexpr int kMinutesPerDay = 1440;

/// Morning peak 06:00-10:00, evening peak 15:00-19:00, otherwise off-peak.
constexpr Period period_of(int minute_of_day) noexcept {
  if (minute_of_day >= 360 && minute_of_day < 600) return Period::MorningPeak;
  if (minute_of_day >= 900 && minute_of_day < 1140) return Period::EveningPeak;
  return Period::OffPeak;
}

inline std::string_view period_name(Period p) noexcept {
  switch (p) {
    case Period::MorningPeak: return "morning-peak";
    case Period::EveningPeak: return "evening-peak";
    case Period::OffPeak: return "off-peak";
  }
  return "?";
}

inline std::string_view day_name(DayOfWeek d) noexcept {
  static constexpr std::array<std::string_view, 7> names{"mon", "tue", "wed", "thu",
                                                         "fri", "sat", "sun"};
  return names[static_cast<std::size_t>(d)];
}

/// Exogenous predictors Z_t of a regime switch.
struct ExogenousFeatures {
  int time_of_day = 0;  // minutes since midnight
  DayOfWeek day_of_week = DayOfWeek::Wednesday;
  std::vector<double> recent_speeds;  // most recent first, at most three
  bool event = false;
  bool accident = false;
  bool weather = false;

  [[nodiscard]] Period period() const noexcept { return period_of(time_of_day); }

  void validate() const {
    if (time_of_day < 0 || time_of_day >= kMinutesPerDay)
      throw Error(ErrorCode::InvalidSpec, "time_of_day out of range: " + std::to_string(time_of_day));
    if (recent_speeds.size() > 3)
      throw Error(ErrorCode::InvalidSpec, "at most three recent speeds are supported");
  }

  /// Calendar features of a UTC epoch timestamp.
  static ExogenousFeatures at_epoch(long long epoch_seconds) {
    constexpr long long kDay = 86400;
    long long days = epoch_seconds / kDay;
    long long secs = epoch_seconds % kDay;
    if (secs < 0) {
      secs += kDay;
      --days;
    }
    ExogenousFeatures z;
    z.time_of_day = static_cast<int>(secs / 60);
    // 1970-01-01 was a Thursday.
    z.day_of_week = static_cast<DayOfWeek>(((days + 3) % 7 + 7) % 7);
    return z;
  }
};

/// Row r is the distribution of the next regime given current regime r,
/// both in the order (Breakdown, FreeFlow, Recovery).
class TransitionMatrix {
public:
  TransitionMatrix() : p_(Eigen::Matrix3d::Constant(1.0 / 3.0)) {}

  explicit TransitionMatrix(const Eigen::Matrix3d& p) : p_(p) { validate(); }

  static TransitionMatrix defaults() {
    Eigen::Matrix3d p;
    p << 0.6, 0.3, 0.1,
         0.15, 0.7, 0.15,
         0.3, 0.1, 0.6;
    return TransitionMatrix(p);
  }

  /// Every row degenerate at `target`.
  static TransitionMatrix absorbing(Regime target) {
    Eigen::Matrix3d p = Eigen::Matrix3d::Zero();
    p.col(static_cast<Eigen::Index>(regime_index(target))).setOnes();
    return TransitionMatrix(p);
  }

  [[nodiscard]] const Eigen::Matrix3d& matrix() const noexcept { return p_; }

  [[nodiscard]] RegimeArray<double> row(Regime from) const {
    const auto i = static_cast<Eigen::Index>(regime_index(from));
    return {p_(i, 0), p_(i, 1), p_(i, 2)};
  }

private:
  void validate() const {
    for (Eigen::Index r = 0; r < 3; ++r) {
      for (Eigen::Index c = 0; c < 3; ++c)
        if (!(p_(r, c) >= 0.0 && p_(r, c) <= 1.0))
          throw Error(ErrorCode::InvalidSpec, "transition entries must lie in [0, 1]");
      if (std::abs(p_.row(r).sum() - 1.0) > 1e-12)
        throw Error(ErrorCode::InvalidSpec, "transition rows must sum to 1");
    }
  }

  Eigen::Matrix3d p_;
};

/// Stationary distribution pi = pi P via the eigenvector of P' closest to eigenvalue 1.
inline RegimeArray<double> stationary_distribution(const TransitionMatrix& tm) {
  Eigen::EigenSolver<Eigen::Matrix3d> es(tm.matrix().transpose());
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < 3; ++i)
    if (std::abs(es.eigenvalues()(i) - 1.0) < std::abs(es.eigenvalues()(best) - 1.0)) best = i;
  Eigen::Vector3d v = es.eigenvectors().col(best).real();
  v /= v.sum();
  return {v(0), v(1), v(2)};
}

// ---------------------------------------------------------------------------
// Kernel variants

struct FixedKernel {
  TransitionMatrix matrix;
};

struct LookupKernel {
  std::map<std::pair<Period, DayOfWeek>, TransitionMatrix> table;
  TransitionMatrix fallback;  // used for keys absent from the table

  [[nodiscard]] const TransitionMatrix& at(Period p, DayOfWeek d) const {
    auto it = table.find({p, d});
    return it == table.end() ? fallback : it->second;
  }
};

/// One labelled point of the kNN history: the features observed at a step,
/// the regime at that step and the regime that followed.
struct KnnRecord {
  ExogenousFeatures features;
  Regime current = Regime::FreeFlow;
  Regime next = Regime::FreeFlow;
};

enum class KnnWeighting { InverseDistance, ProportionalDistance };

struct KnnOptions {
  std::size_t k = 25;
  double speed_scale = 63.0;  // recent speeds are divided by this (free-flow speed)
  double speed_weight = 1.0;
  double time_weight = 1.0;
  double regime_weight = 10.0;  // penalty for a different current regime
  KnnWeighting weighting = KnnWeighting::InverseDistance;
};

struct KnnKernel {
  std::shared_ptr<const std::vector<KnnRecord>> history;
  KnnOptions options;
};

namespace detail {

inline double knn_distance(const ExogenousFeatures& query, Regime alpha, const KnnRecord& rec,
                           const KnnOptions& opt) {
  double d2 = 0.0;
  for (std::size_t j = 0; j < query.recent_speeds.size(); ++j) {
    // A record lacking a lag sits at the maximal normalized distance on it.
    const double diff = j < rec.features.recent_speeds.size()
                            ? (query.recent_speeds[j] - rec.features.recent_speeds[j]) / opt.speed_scale
                            : 1.0;
    d2 += opt.speed_weight * opt.speed_weight * diff * diff;
  }
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const double a = kTwoPi * query.time_of_day / kMinutesPerDay;
  const double b = kTwoPi * rec.features.time_of_day / kMinutesPerDay;
  const double dc = std::cos(a) - std::cos(b);
  const double ds = std::sin(a) - std::sin(b);
  d2 += opt.time_weight * opt.time_weight * (dc * dc + ds * ds);
  if (rec.current != alpha) d2 += opt.regime_weight * opt.regime_weight;
  return std::sqrt(d2);
}

}  // namespace detail

/// Distance-weighted empirical distribution of the next regime among the k
/// history records nearest to (Z, alpha).
inline RegimeArray<double> knn_transition(std::span<const KnnRecord> history, const KnnOptions& opt,
                                          const ExogenousFeatures& z, Regime alpha) {
  if (opt.k == 0) throw Error(ErrorCode::InvalidSpec, "knn: k must be at least 1");
  if (history.size() < opt.k)
    throw Error(ErrorCode::InsufficientHistory, "knn: history has " + std::to_string(history.size()) +
                                                    " records, k = " + std::to_string(opt.k));
  if (z.recent_speeds.empty())
    throw Error(ErrorCode::MissingFeatures, "knn kernel requires recent speeds");

  std::vector<std::pair<double, std::size_t>> dist(history.size());
  for (std::size_t i = 0; i < history.size(); ++i)
    dist[i] = {detail::knn_distance(z, alpha, history[i], opt), i};
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(opt.k), dist.end());
  dist.resize(opt.k);

  std::vector<double> w(opt.k);
  if (opt.weighting == KnnWeighting::InverseDistance) {
    double min_pos = std::numeric_limits<double>::infinity();
    for (const auto& [d, i] : dist)
      if (d > 0.0) min_pos = std::min(min_pos, d);
    for (std::size_t j = 0; j < opt.k; ++j) {
      const double d = dist[j].first;
      if (d > 0.0)
        w[j] = 1.0 / d;
      else
        w[j] = std::isfinite(min_pos) ? 1e3 / min_pos : 1.0;
    }
  } else {
    bool any = false;
    for (std::size_t j = 0; j < opt.k; ++j) {
      w[j] = dist[j].first;
      any = any || w[j] > 0.0;
    }
    if (!any) std::fill(w.begin(), w.end(), 1.0);
  }

  RegimeArray<double> out{0.0, 0.0, 0.0};
  double total = 0.0;
  for (std::size_t j = 0; j < opt.k; ++j) {
    out[regime_index(history[dist[j].second].next)] += w[j];
    total += w[j];
  }
  for (double& p : out) p /= total;
  return out;
}

class RegimeKernel {
public:
  using Variant = std::variant<FixedKernel, LookupKernel, KnnKernel>;

  RegimeKernel() : v_(FixedKernel{TransitionMatrix::defaults()}) {}
  explicit RegimeKernel(TransitionMatrix m) : v_(FixedKernel{std::move(m)}) {}
  explicit RegimeKernel(LookupKernel k) : v_(std::move(k)) {}
  explicit RegimeKernel(KnnKernel k) : v_(std::move(k)) {
    const auto& knn = std::get<KnnKernel>(v_);
    if (!knn.history || knn.history->empty())
      throw Error(ErrorCode::EmptyHistory, "knn kernel requires a non-empty history");
    if (knn.options.k == 0 || knn.history->size() < knn.options.k)
      throw Error(ErrorCode::InsufficientHistory, "knn kernel history shorter than k");
  }

  [[nodiscard]] const Variant& variant() const noexcept { return v_; }

  /// True when the kernel does not look at Z.
  [[nodiscard]] bool is_fixed() const noexcept { return std::holds_alternative<FixedKernel>(v_); }
  [[nodiscard]] bool needs_recent_speeds() const noexcept {
    return std::holds_alternative<KnnKernel>(v_);
  }

  [[nodiscard]] RegimeArray<double> transition_probs(Regime alpha, const ExogenousFeatures& z) const {
    return std::visit(
        [&](const auto& k) -> RegimeArray<double> {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, FixedKernel>) {
            return k.matrix.row(alpha);
          } else if constexpr (std::is_same_v<K, LookupKernel>) {
            return k.at(z.period(), z.day_of_week).row(alpha);
          } else {
            return knn_transition(*k.history, k.options, z, alpha);
          }
        },
        v_);
  }

private:
  Variant v_;
};

inline RegimeArray<double> transition_probs(const RegimeKernel& kernel, Regime alpha,
                                            const ExogenousFeatures& z) {
  return kernel.transition_probs(alpha, z);
}

/// A uniform draw on [0, 1) with 53 random bits.
template <typename Rng>
double uniform01(Rng& rng) {
  return std::generate_canonical<double, 53>(rng);
}

/// Inverse-CDF selection from a regime distribution; never returns a
/// zero-probability regime.
inline Regime draw_regime(const RegimeArray<double>& probs, double u) {
  const double total = probs[0] + probs[1] + probs[2];
  double target = u * total;
  std::size_t last = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    if (probs[r] <= 0.0) continue;
    last = r;
    if (target < probs[r]) return regime_from_index(r);
    target -= probs[r];
  }
  return regime_from_index(last);
}

template <typename Rng>
Regime sample_next(const RegimeKernel& kernel, Regime alpha, const ExogenousFeatures& z, Rng& rng) {
  return draw_regime(kernel.transition_probs(alpha, z), uniform01(rng));
}

// ---------------------------------------------------------------------------
// Fitting

/// Dirichlet-multinomial MAP of each transition row from consecutive regime
/// labels. Rows with no mass fall back to uniform.
inline TransitionMatrix fit_map_transition(std::span<const Regime> history,
                                           const Eigen::Matrix3d& dirichlet_prior) {
  if (history.size() < 2)
    throw Error(ErrorCode::EmptyHistory, "fit_map_transition needs at least two labelled steps");
  Eigen::Matrix3d counts = Eigen::Matrix3d::Zero();
  for (std::size_t t = 1; t < history.size(); ++t)
    counts(static_cast<Eigen::Index>(regime_index(history[t - 1])),
           static_cast<Eigen::Index>(regime_index(history[t]))) += 1.0;

  Eigen::Matrix3d p;
  for (Eigen::Index r = 0; r < 3; ++r) {
    Eigen::RowVector3d mode = (counts.row(r) + dirichlet_prior.row(r)).array() - 1.0;
    mode = mode.cwiseMax(0.0);
    const double total = mode.sum();
    if (total > 0.0)
      p.row(r) = mode / total;
    else
      p.row(r).setConstant(1.0 / 3.0);
  }
  return TransitionMatrix(p);
}

inline TransitionMatrix fit_map_transition(std::span<const Regime> history) {
  return fit_map_transition(history, Eigen::Matrix3d::Ones());
}

/// Overload over (regime, features) pairs; features are ignored by the fixed fit.
inline TransitionMatrix fit_map_transition(
    std::span<const std::pair<Regime, ExogenousFeatures>> history,
    const Eigen::Matrix3d& dirichlet_prior) {
  std::vector<Regime> labels;
  labels.reserve(history.size());
  for (const auto& [r, z] : history) labels.push_back(r);
  return fit_map_transition(labels, dirichlet_prior);
}

/// One MAP matrix per (period, day) of the source step; the global fit is the fallback.
inline LookupKernel fit_lookup_kernel(std::span<const std::pair<Regime, ExogenousFeatures>> history,
                                      const Eigen::Matrix3d& dirichlet_prior) {
  LookupKernel out;
  out.fallback = fit_map_transition(history, dirichlet_prior);
  std::map<std::pair<Period, DayOfWeek>, Eigen::Matrix3d> counts;
  for (std::size_t t = 1; t < history.size(); ++t) {
    const auto& z = history[t - 1].second;
    auto [it, inserted] = counts.try_emplace({z.period(), z.day_of_week}, Eigen::Matrix3d::Zero());
    it->second(static_cast<Eigen::Index>(regime_index(history[t - 1].first)),
               static_cast<Eigen::Index>(regime_index(history[t].first))) += 1.0;
  }
  for (const auto& [key, c] : counts) {
    Eigen::Matrix3d p;
    for (Eigen::Index r = 0; r < 3; ++r) {
      Eigen::RowVector3d mode = ((c.row(r) + dirichlet_prior.row(r)).array() - 1.0).cwiseMax(0.0);
      const double total = mode.sum();
      if (total > 0.0)
        p.row(r) = mode / total;
      else
        p.row(r) = out.fallback.matrix().row(r);
    }
    out.table.emplace(key, TransitionMatrix(p));
  }
  return out;
}

}  // namespace flowtrack
