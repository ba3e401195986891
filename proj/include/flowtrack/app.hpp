#pragma once

// Command orchestration behind the `flowtrack` tool. Each command reads its
// inputs, writes its outputs and a `<output>.manifest.json` sidecar holding
// everything needed to reproduce the output byte for byte.
//
// Exit codes:
//   0 success
//   1 internal error
//   2 usage error (bad flags, T = 0, missing seed)
//   3 configuration error (bad config file, invalid model, non-conjugate priors)
//   4 I/O error (missing or unwritable file)
//   5 data error (header mismatch, empty file, dimension mismatch, short history)
//   6 numerical failure (all weights zero, non-positive-definite covariance)

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowtrack/baselines.hpp"
#include "flowtrack/config.hpp"
#include "flowtrack/data_io.hpp"
#include "flowtrack/errors.hpp"
#include "flowtrack/particle_filter.hpp"
#include "flowtrack/simulate.hpp"

namespace flowtrack {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
  std::string command;  // simulate | filter | learn | baseline | fit-kernel
  std::optional<std::filesystem::path> config;
  std::filesystem::path input;
  std::filesystem::path output;
  std::size_t particles = 10000;
  std::optional<std::uint64_t> seed;
  PropagationMode mode = PropagationMode::Adapted;
  ResamplingScheme resampling = ResamplingScheme::Multinomial;
  int threads = 1;
  SummaryFormat format = SummaryFormat::Csv;
  // baseline
  std::size_t window = 6;
  double down_threshold = -0.1;
  double up_threshold = 0.1;
  double quantile = 0.5;
  // simulate
  std::size_t steps = 288;
  long long start_epoch = 1242172800;
  std::string sensor_id = "sim";
  // fit-kernel
  bool by_period = false;
};

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UsageError: return 2;
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidSpec:
    case ErrorCode::NonConjugateConfig: return 3;
    case ErrorCode::FileNotFound:
    case ErrorCode::IoError: return 4;
    case ErrorCode::HeaderMismatch:
    case ErrorCode::EmptyFile:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::MissingFeatures:
    case ErrorCode::EmptyHistory:
    case ErrorCode::InsufficientHistory:
    case ErrorCode::WindowTooLong: return 5;
    case ErrorCode::AllWeightsZero:
    case ErrorCode::NonPositiveDefinite: return 6;
  }
  return 1;
}

inline std::string_view mode_name(PropagationMode m) { return m == PropagationMode::Adapted ? "adapted" : "prior"; }
inline std::string_view resampling_name(ResamplingScheme s) {
  return s == ResamplingScheme::Multinomial ? "multinomial" : "systematic";
}

/// Runs the particle filter over measurement records. The kernel features
/// for step t+1 use the calendar time of step t and the filtered mean speeds
/// of the three previous steps.
inline std::vector<PosteriorSummary> filter_records(const std::vector<MeasurementRecord>& records,
                                                    const ModelSpec& spec, std::shared_ptr<const RegimeKernel> kernel,
                                                    const FilterOptions& options, double* log_marginal = nullptr) {
  FilterState state = init(spec, std::move(kernel), options);
  std::vector<PosteriorSummary> out;
  out.reserve(records.size());
  std::vector<double> recent{spec.prior_mean(0)};
  std::optional<long long> prev_ts;
  for (const auto& rec : records) {
    ExogenousFeatures features = ExogenousFeatures::at_epoch(prev_ts.value_or(rec.timestamp - 300));
    features.recent_speeds = recent;
    Eigen::VectorXd z = Eigen::Map<const Eigen::VectorXd>(rec.regressors.data(),
                                                          static_cast<Eigen::Index>(rec.regressors.size()));
    const double y = rec.speed ? *rec.speed : std::numeric_limits<double>::quiet_NaN();
    out.push_back(step(state, y, z, features));
    recent.insert(recent.begin(), out.back().mean_speed);
    if (recent.size() > 3) recent.pop_back();
    prev_ts = rec.timestamp;
  }
  if (log_marginal) *log_marginal = state.log_marginal_lik;
  return out;
}

namespace app_detail {

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_manifest(const RunConfig& rc, const nlohmann::ordered_json& extra) {
  nlohmann::ordered_json m;
  m["tool"] = "flowtrack";
  m["version"] = kVersion;
  m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  m["command"] = rc.command;
  m["config_path"] = rc.config ? rc.config->string() : "";
  m["config_text"] = rc.config ? read_text(*rc.config) : "";
  m["input"] = rc.input.string();
  m["output"] = rc.output.string();
  for (const auto& [k, v] : extra.items()) m[k] = v;
  std::filesystem::path path = rc.output;
  path += ".manifest.json";
  auto out = io_detail::open_for_write(path);
  out << m.dump(2) << '\n';
  io_detail::finish(out, path);
}

inline ModelConfig load_model(const RunConfig& rc) {
  if (rc.config) return load_config(*rc.config);
  std::istringstream empty;
  return parse_config(empty);
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw Error(ErrorCode::UsageError, msg);
}

inline void report_rows(const LoadResult& loaded, std::ostream& log) {
  for (const auto& e : loaded.errors) log << "flowtrack: warning line=" << e.line << " rejected: " << e.message << '\n';
  for (const auto& e : loaded.warnings) log << "flowtrack: warning line=" << e.line << " " << e.message << '\n';
  if (!loaded.gap_indices.empty())
    log << "flowtrack: warning " << loaded.gap_indices.size() << " cadence gap(s) in input\n";
}

inline void cmd_simulate(const RunConfig& rc) {
  require(rc.steps >= 1, "simulate: --steps must be at least 1");
  require(rc.seed.has_value(), "simulate: --seed is required");
  require(!rc.output.empty(), "simulate: --output is required");
  const auto cfg = load_model(rc);
  const auto kernel = build_kernel(cfg.kernel);
  SimulationOptions opt;
  opt.start_epoch = rc.start_epoch;
  opt.cadence_seconds = cfg.schema.cadence_seconds;
  if (cfg.spec.gamma.size() > 0) opt.regressors.assign(rc.steps, Eigen::VectorXd::Ones(cfg.spec.gamma.size()));
  const auto sim = simulate(cfg.spec, kernel, rc.steps, *rc.seed, opt);
  std::vector<double> theta, beta;
  for (const auto& x : sim.true_states) {
    theta.push_back(x(0));
    beta.push_back(x(1));
  }
  write_measurements(rc.output, to_records(sim, rc.sensor_id, opt.regressors), cfg.schema,
                     {{"true_speed", theta}, {"true_rate", beta}});
  write_manifest(rc, {{"seed", *rc.seed}, {"steps", rc.steps}, {"start_epoch", rc.start_epoch},
                      {"sensor_id", rc.sensor_id}});
}

inline void cmd_filter(const RunConfig& rc, bool learn, std::ostream& log) {
  require(rc.seed.has_value(), rc.command + ": --seed is required");
  require(rc.particles >= 1, rc.command + ": --particles must be at least 1");
  require(rc.threads >= 1, rc.command + ": --threads must be at least 1");
  require(!rc.input.empty() && !rc.output.empty(), rc.command + ": --input and --output are required");
  auto cfg = load_model(rc);
  if (learn && !cfg.learning.enabled()) cfg.learning.learn_obs_var = true;
  const auto kernel = std::make_shared<const RegimeKernel>(build_kernel(cfg.kernel));
  const auto loaded = load_measurements(rc.input, cfg.schema);
  report_rows(loaded, log);

  FilterOptions opt;
  opt.particles = rc.particles;
  opt.seed = *rc.seed;
  opt.mode = rc.mode;
  opt.resampling = rc.resampling;
  opt.threads = rc.threads;
  if (learn) opt.learning = cfg.learning;
  const auto rows = filter_records(loaded.records, cfg.spec, kernel, opt);
  write_summaries(rc.output, rows, rc.format);
  write_manifest(rc, {{"seed", *rc.seed},
                      {"particles", rc.particles},
                      {"mode", mode_name(rc.mode)},
                      {"resampling", resampling_name(rc.resampling)},
                      {"threads", rc.threads},
                      {"format", rc.format == SummaryFormat::Csv ? "csv" : "jsonl"},
                      {"learning", learn},
                      {"rows", rows.size()},
                      {"rejected_rows", loaded.errors.size()}});
}

inline void cmd_baseline(const RunConfig& rc, std::ostream& log) {
  require(!rc.input.empty() && !rc.output.empty(), "baseline: --input and --output are required");
  const auto cfg = load_model(rc);
  const auto loaded = load_measurements(rc.input, cfg.schema);
  report_rows(loaded, log);
  std::vector<double> y;
  for (const auto& r : loaded.records) y.push_back(r.speed ? *r.speed : std::numeric_limits<double>::quiet_NaN());
  std::vector<BaselineRun> runs;
  auto add = [&](std::string name, baselines::Series s) {
    auto regimes = baselines::classify(s, rc.down_threshold, rc.up_threshold);
    runs.push_back({std::move(name), std::move(s), std::move(regimes)});
  };
  add("mean", baselines::mean_filter(y, rc.window));
  add("diff", baselines::diff_filter(y));
  add("quantile", baselines::quantile_filter(y, rc.window, rc.quantile));
  write_baselines(rc.output, runs);
  write_manifest(rc, {{"window", rc.window},
                      {"thresholds", {rc.down_threshold, rc.up_threshold}},
                      {"quantile", rc.quantile}});
}

inline void cmd_fit_kernel(const RunConfig& rc, std::ostream& log) {
  require(!rc.input.empty() && !rc.output.empty(), "fit-kernel: --input and --output are required");
  const auto cfg = load_model(rc);
  const auto loaded = load_measurements(rc.input, cfg.schema);
  report_rows(loaded, log);
  std::vector<std::pair<Regime, ExogenousFeatures>> history;
  for (const auto& r : loaded.records)
    if (r.regime) history.emplace_back(*r.regime, ExogenousFeatures::at_epoch(r.timestamp));
  if (history.size() < 2) throw Error(ErrorCode::EmptyHistory, "fit-kernel: input needs a regime column with labels");
  const Eigen::Matrix3d prior = Eigen::Matrix3d::Ones();

  std::ostringstream text;
  text << "# MAP transition fit from " << history.size() << " labelled steps (flat Dirichlet prior)\n";
  if (rc.by_period) {
    const auto lookup = fit_lookup_kernel(history, prior);
    text << "kernel = lookup\n" << format_transition(lookup.fallback) << '\n';
    for (const auto& [key, tm] : lookup.table)
      text << format_transition(tm, "transition." + std::string(period_name(key.first)) + "." +
                                        std::string(day_name(key.second)))
           << '\n';
  } else {
    text << "kernel = fixed\n" << format_transition(fit_map_transition(history, prior)) << '\n';
  }
  auto out = io_detail::open_for_write(rc.output);
  out << text.str();
  io_detail::finish(out, rc.output);
  write_manifest(rc, {{"by_period", rc.by_period}, {"labelled_steps", history.size()}});
}

}  // namespace app_detail

/// Executes one command. Errors are reported as a single line on `log`:
///   flowtrack: error=<Code> exit=<n> <message>
inline int run(const RunConfig& rc, std::ostream& log) {
  try {
    if (rc.command == "simulate")
      app_detail::cmd_simulate(rc);
    else if (rc.command == "filter")
      app_detail::cmd_filter(rc, false, log);
    else if (rc.command == "learn")
      app_detail::cmd_filter(rc, true, log);
    else if (rc.command == "baseline")
      app_detail::cmd_baseline(rc, log);
    else if (rc.command == "fit-kernel")
      app_detail::cmd_fit_kernel(rc, log);
    else
      throw Error(ErrorCode::UsageError, "unknown command '" + rc.command + "'");
    return 0;
  } catch (const Error& e) {
    const int code = exit_code_for(e.code());
    log << "flowtrack: error=" << to_string(e.code()) << " exit=" << code << " " << e.what() << '\n';
    return code;
  } catch (const std::exception& e) {
    log << "flowtrack: error=Internal exit=1 " << e.what() << '\n';
    return 1;
  }
}

}  // namespace flowtrack
