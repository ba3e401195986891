#pragma once

// Plain-text model configuration: one `key = value` per line, `#` starts a
// comment, matrices are row-major comma lists. Every key is optional; absent
// keys keep the built-in defaults.
//
//   h                  = 1, 0
//   f0                 = 0.5
//   v_free             = 63
//   gamma              = 2            # regressor coefficients, may be empty
//   regressor_columns  = z0           # CSV columns holding the regressors
//   obs_var            = 4            # one value, or three (breakdown, freeflow, recovery)
//   obs_var.<regime>   = 4
//   evo_cov            = 1.9, 0, 0, 4.5
//   evo_cov.<regime>   = 1.9, 0, 0, 4.5
//   prior_mean         = 63, 0
//   prior_cov          = 25, 0, 0, 4.5
//   prior_regime_probs = 0.3333333333333333, 0.3333333333333333, 0.3333333333333334
//   kernel             = fixed | lookup | knn
//   transition         = 0.6, 0.3, 0.1, 0.15, 0.7, 0.15, 0.3, 0.1, 0.6
//   transition.<period>.<day> = ...  # lookup entries; period morning-peak|evening-peak|off-peak,
//                                    # day mon..sun or * for every day
//   knn.history        = labelled.csv  # relative to the config file
//   knn.k, knn.speed_scale, knn.speed_weight, knn.time_weight, knn.regime_weight
//   knn.weighting      = inverse | proportional
//   learn.obs_var      = true | false
//   learn.gamma        = true | false
//   prior.v_shape, prior.v_scale, prior.gamma_mean, prior.gamma_precision

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "flowtrack/data_io.hpp"
#include "flowtrack/errors.hpp"
#include "flowtrack/model.hpp"
#include "flowtrack/particle_learning.hpp"
#include "flowtrack/regime_kernel.hpp"

namespace flowtrack {

enum class KernelType { Fixed, Lookup, Knn };

struct KernelConfig {
  KernelType type = KernelType::Fixed;
  TransitionMatrix matrix = TransitionMatrix::defaults();
  std::map<std::pair<Period, DayOfWeek>, TransitionMatrix> lookup;
  KnnOptions knn;
  bool knn_scale_set = false;
  std::filesystem::path knn_history;
};

struct ModelConfig {
  ModelSpec spec;
  KernelConfig kernel;
  LearningConfig learning;
  CsvSchema schema;
};

namespace config_detail {

inline std::vector<double> parse_list(std::string_view key, std::string_view value) {
  std::vector<double> out;
  if (io_detail::trim(value).empty()) return out;
  for (auto part : io_detail::split(value)) {
    const auto v = io_detail::parse_double(io_detail::trim(part));
    if (!v) throw Error(ErrorCode::ConfigError, "bad number in '" + std::string(key) + "'");
    out.push_back(*v);
  }
  return out;
}

inline std::vector<double> parse_n(std::string_view key, std::string_view value, std::size_t n) {
  auto v = parse_list(key, value);
  if (v.size() != n)
    throw Error(ErrorCode::ConfigError, "'" + std::string(key) + "' expects " + std::to_string(n) +
                                            " values, got " + std::to_string(v.size()));
  return v;
}

inline Mat2 parse_mat2(std::string_view key, std::string_view value) {
  const auto v = parse_n(key, value, 4);
  Mat2 m;
  m << v[0], v[1], v[2], v[3];
  return m;
}

inline TransitionMatrix parse_transition(std::string_view key, std::string_view value) {
  const auto v = parse_n(key, value, 9);
  Eigen::Matrix3d p;
  p << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  try {
    return TransitionMatrix(p);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, "'" + std::string(key) + "': " + e.what());
  }
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::ConfigError, "'" + std::string(key) + "' expects true or false");
}

inline double parse_scalar(std::string_view key, std::string_view value) {
  return parse_n(key, value, 1).front();
}

inline Regime parse_regime_key(std::string_view key, std::string_view name) {
  const auto r = parse_regime(name);
  if (!r) throw Error(ErrorCode::ConfigError, "unknown regime in '" + std::string(key) + "'");
  return *r;
}

inline std::optional<Period> parse_period(std::string_view s) {
  if (s == "morning-peak") return Period::MorningPeak;
  if (s == "evening-peak") return Period::EveningPeak;
  if (s == "off-peak") return Period::OffPeak;
  return std::nullopt;
}

inline std::optional<DayOfWeek> parse_day(std::string_view s) {
  for (int d = 0; d < 7; ++d)
    if (day_name(static_cast<DayOfWeek>(d)) == s) return static_cast<DayOfWeek>(d);
  return std::nullopt;
}

}  // namespace config_detail

/// Parses configuration text. Relative paths resolve against `base_dir`.
inline ModelConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  using io_detail::trim;
  ModelConfig cfg;
  bool priors_gamma_set = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view text = line;
    if (const auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
    text = trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": expected key = value");
    const auto key = trim(text.substr(0, eq));
    const auto value = trim(text.substr(eq + 1));
    auto& spec = cfg.spec;

    if (key == "h") {
      const auto v = parse_n(key, value, 2);
      spec.h_row << v[0], v[1];
    } else if (key == "f0") {
      spec.f0 = parse_scalar(key, value);
    } else if (key == "v_free") {
      spec.v_free = parse_scalar(key, value);
    } else if (key == "gamma") {
      const auto v = parse_list(key, value);
      spec.gamma = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    } else if (key == "regressor_columns") {
      cfg.schema.regressor_columns.clear();
      if (!value.empty())
        for (auto part : io_detail::split(value)) cfg.schema.regressor_columns.emplace_back(trim(part));
    } else if (key == "obs_var") {
      const auto v = parse_list(key, value);
      if (v.size() == 1)
        spec.obs_var = {v[0], v[0], v[0]};
      else if (v.size() == 3)
        spec.obs_var = {v[0], v[1], v[2]};
      else
        throw Error(ErrorCode::ConfigError, "'obs_var' expects 1 or 3 values");
    } else if (key.starts_with("obs_var.")) {
      spec.obs_var[regime_index(parse_regime_key(key, key.substr(8)))] = parse_scalar(key, value);
    } else if (key == "evo_cov") {
      const Mat2 w = parse_mat2(key, value);
      spec.evo_cov = {w, w, w};
    } else if (key.starts_with("evo_cov.")) {
      spec.evo_cov[regime_index(parse_regime_key(key, key.substr(8)))] = parse_mat2(key, value);
    } else if (key == "prior_mean") {
      const auto v = parse_n(key, value, 2);
      spec.prior_mean << v[0], v[1];
    } else if (key == "prior_cov") {
      spec.prior_cov = parse_mat2(key, value);
    } else if (key == "prior_regime_probs") {
      const auto v = parse_n(key, value, 3);
      spec.prior_regime_probs = {v[0], v[1], v[2]};
    } else if (key == "kernel") {
      if (value == "fixed")
        cfg.kernel.type = KernelType::Fixed;
      else if (value == "lookup")
        cfg.kernel.type = KernelType::Lookup;
      else if (value == "knn")
        cfg.kernel.type = KernelType::Knn;
      else
        throw Error(ErrorCode::ConfigError, "unknown kernel '" + std::string(value) + "'");
    } else if (key == "transition") {
      cfg.kernel.matrix = parse_transition(key, value);
    } else if (key.starts_with("transition.")) {
      const auto rest = key.substr(11);
      const auto dot = rest.find('.');
      const auto period = parse_period(rest.substr(0, dot));
      if (!period || dot == std::string_view::npos)
        throw Error(ErrorCode::ConfigError, "bad lookup key '" + std::string(key) + "'");
      const auto day_text = rest.substr(dot + 1);
      const auto tm = parse_transition(key, value);
      if (day_text == "*") {
        for (int d = 0; d < 7; ++d) cfg.kernel.lookup.insert_or_assign({*period, static_cast<DayOfWeek>(d)}, tm);
      } else {
        const auto day = parse_day(day_text);
        if (!day) throw Error(ErrorCode::ConfigError, "bad day in '" + std::string(key) + "'");
        cfg.kernel.lookup.insert_or_assign({*period, *day}, tm);
      }
    } else if (key == "knn.history") {
      std::filesystem::path p{std::string(value)};
      cfg.kernel.knn_history = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    } else if (key == "knn.k") {
      const double k = parse_scalar(key, value);
      if (!(k >= 1.0) || k != std::floor(k)) throw Error(ErrorCode::ConfigError, "knn.k must be a positive integer");
      cfg.kernel.knn.k = static_cast<std::size_t>(k);
    } else if (key == "knn.speed_scale") {
      cfg.kernel.knn.speed_scale = parse_scalar(key, value);
      cfg.kernel.knn_scale_set = true;
    } else if (key == "knn.speed_weight") {
      cfg.kernel.knn.speed_weight = parse_scalar(key, value);
    } else if (key == "knn.time_weight") {
      cfg.kernel.knn.time_weight = parse_scalar(key, value);
    } else if (key == "knn.regime_weight") {
      cfg.kernel.knn.regime_weight = parse_scalar(key, value);
    } else if (key == "knn.weighting") {
      if (value == "inverse")
        cfg.kernel.knn.weighting = KnnWeighting::InverseDistance;
      else if (value == "proportional")
        cfg.kernel.knn.weighting = KnnWeighting::ProportionalDistance;
      else
        throw Error(ErrorCode::ConfigError, "knn.weighting must be inverse or proportional");
    } else if (key == "learn.obs_var") {
      cfg.learning.learn_obs_var = parse_bool(key, value);
    } else if (key == "learn.gamma") {
      cfg.learning.learn_gamma = parse_bool(key, value);
    } else if (key == "prior.v_shape") {
      cfg.learning.priors.v_shape = parse_scalar(key, value);
    } else if (key == "prior.v_scale") {
      cfg.learning.priors.v_scale = parse_scalar(key, value);
    } else if (key == "prior.gamma_mean") {
      const auto v = parse_list(key, value);
      cfg.learning.priors.gamma_mean = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      priors_gamma_set = true;
    } else if (key == "prior.gamma_precision") {
      const auto v = parse_list(key, value);
      const auto k = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(v.size()))));
      if (static_cast<std::size_t>(k * k) != v.size())
        throw Error(ErrorCode::ConfigError, "prior.gamma_precision must be square");
      cfg.learning.priors.gamma_precision =
          Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data(), k, k);
      priors_gamma_set = true;
    } else {
      throw Error(ErrorCode::ConfigError, "unknown key '" + std::string(key) + "'");
    }
  }

  if (!priors_gamma_set) {
    const auto defaults = default_priors(cfg.spec);
    cfg.learning.priors.gamma_mean = defaults.gamma_mean;
    cfg.learning.priors.gamma_precision = defaults.gamma_precision;
  }
  if (!cfg.kernel.knn_scale_set) cfg.kernel.knn.speed_scale = cfg.spec.v_free;
  if (static_cast<std::size_t>(cfg.spec.gamma.size()) != cfg.schema.regressor_columns.size())
    throw Error(ErrorCode::ConfigError, "gamma and regressor_columns must have the same length");
  try {
    cfg.spec.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  return cfg;
}

inline ModelConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::FileNotFound, "no such file: " + path.string());
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_config(in, path.parent_path());
}

/// kNN history from labelled records: the features at step t (time of day
/// and the speeds at t, t-1, t-2) with the labels at t and t+1. Steps
/// without a label or speed on either side are skipped.
inline std::vector<KnnRecord> knn_history_from_records(const std::vector<MeasurementRecord>& records) {
  std::vector<KnnRecord> out;
  for (std::size_t t = 0; t + 1 < records.size(); ++t) {
    const auto& cur = records[t];
    const auto& nxt = records[t + 1];
    if (!cur.regime || !nxt.regime || !cur.speed) continue;
    KnnRecord rec;
    rec.features = ExogenousFeatures::at_epoch(cur.timestamp);
    for (std::size_t lag = 0; lag < 3 && lag <= t; ++lag) {
      const auto& past = records[t - lag];
      if (!past.speed) break;
      rec.features.recent_speeds.push_back(*past.speed);
    }
    rec.current = *cur.regime;
    rec.next = *nxt.regime;
    out.push_back(std::move(rec));
  }
  return out;
}

inline RegimeKernel build_kernel(const KernelConfig& cfg) {
  switch (cfg.type) {
    case KernelType::Fixed:
      return RegimeKernel(cfg.matrix);
    case KernelType::Lookup:
      return RegimeKernel(LookupKernel{cfg.lookup, cfg.matrix});
    case KernelType::Knn: {
      if (cfg.knn_history.empty()) throw Error(ErrorCode::ConfigError, "kernel = knn requires knn.history");
      const auto loaded = load_measurements(cfg.knn_history);
      auto history = std::make_shared<const std::vector<KnnRecord>>(knn_history_from_records(loaded.records));
      if (history->empty()) throw Error(ErrorCode::EmptyHistory, "knn history has no labelled transitions");
      return RegimeKernel(KnnKernel{std::move(history), cfg.knn});
    }
  }
  throw Error(ErrorCode::ConfigError, "unknown kernel type");
}

/// `transition = ...` line with round-trip precision.
inline std::string format_transition(const TransitionMatrix& tm, const std::string& key = "transition") {
  std::ostringstream out;
  out << key << " = ";
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) out << (r || c ? ", " : "") << io_detail::exact(tm.matrix()(r, c));
  return out.str();
}

}  // namespace flowtrack
