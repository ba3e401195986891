#pragma once

// Measurement CSV ingestion and the per-step output formats.
//
// Measurement CSV: a header naming at least
//   timestamp,sensor_id,speed,count,occupancy
// in any order. Optional columns: `regime` (breakdown|freeflow|recovery or
// -1|0|1) and the regressor columns named in the schema. Empty, NA or nan
// fields are missing values. Unknown columns are ignored.
//
// Summary CSV columns:
//   t,mean_speed,q05,q50,q95,p_breakdown,p_freeflow,p_recovery,mean_rate,ess
// followed, when parameters are learned, by
//   v_breakdown,v_freeflow,v_recovery,v_sd_breakdown,v_sd_freeflow,v_sd_recovery
//   and gamma_<j>,gamma_sd_<j> for each regressor.
// Numbers use 6 significant digits.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "flowtrack/baselines.hpp"
#include "flowtrack/errors.hpp"
#include "flowtrack/model.hpp"
#include "flowtrack/particle_filter.hpp"

namespace flowtrack {

struct MeasurementRecord {
  long long timestamp = 0;  // epoch seconds, UTC
  std::string sensor_id;
  std::optional<double> speed;      // mi/h
  std::optional<double> count;      // vehicles per interval
  std::optional<double> occupancy;  // percent
  std::optional<Regime> regime;     // label, when the file carries one
  std::vector<double> regressors;   // values of CsvSchema::regressor_columns

  bool operator==(const MeasurementRecord&) const = default;
};

struct CsvSchema {
  std::string timestamp_column = "timestamp";
  std::string sensor_column = "sensor_id";
  std::string speed_column = "speed";
  std::string count_column = "count";
  std::string occupancy_column = "occupancy";
  std::string regime_column = "regime";
  std::vector<std::string> regressor_columns;
  long long cadence_seconds = 300;
};

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<MeasurementRecord> records;
  std::vector<RowError> errors;            // rejected rows
  std::vector<RowError> warnings;          // accepted rows with suspicious values
  std::vector<std::size_t> gap_indices;    // records preceded by a cadence gap
};

namespace io_detail {

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool is_missing(std::string_view s) {
  return s.empty() || s == "NA" || s == "na" || s == "nan" || s == "NaN" || s == "null";
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
  s = trim(s);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

/// Shortest text that parses back to the same double.
inline std::string exact(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// Six significant digits.
inline std::string sig6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

}  // namespace io_detail

/// Parses measurement CSV text. Rows violating the record invariants are
/// collected in `errors` with their 1-based line numbers.
inline LoadResult parse_measurements(std::istream& in, const CsvSchema& schema = {}) {
  using namespace io_detail;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw Error(ErrorCode::EmptyFile, "measurement file is empty");

  std::map<std::string, std::size_t, std::less<>> cols;
  const auto n_cols = split(line).size();
  {
    const auto names = split(line);
    for (std::size_t i = 0; i < names.size(); ++i)
      if (!cols.emplace(std::string(trim(names[i])), i).second)
        throw Error(ErrorCode::HeaderMismatch, "duplicate column '" + std::string(trim(names[i])) + "'");
  }
  auto require = [&](const std::string& name) {
    auto it = cols.find(name);
    if (it == cols.end()) throw Error(ErrorCode::HeaderMismatch, "missing column '" + name + "'");
    return it->second;
  };
  const auto c_ts = require(schema.timestamp_column);
  const auto c_sensor = require(schema.sensor_column);
  const auto c_speed = require(schema.speed_column);
  const auto c_count = require(schema.count_column);
  const auto c_occ = require(schema.occupancy_column);
  std::vector<std::size_t> c_reg;
  for (const auto& name : schema.regressor_columns) c_reg.push_back(require(name));
  const auto it_regime = cols.find(schema.regime_column);
  const std::optional<std::size_t> c_regime =
      it_regime == cols.end() ? std::nullopt : std::optional(it_regime->second);

  LoadResult result;
  std::optional<long long> last_ts;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    auto reject = [&](const std::string& msg) { result.errors.push_back({line_no, msg}); };
    if (fields.size() != n_cols) {
      reject("expected " + std::to_string(n_cols) + " fields, found " + std::to_string(fields.size()));
      continue;
    }
    MeasurementRecord rec;
    const auto ts = parse_int(fields[c_ts]);
    if (!ts) {
      reject("bad timestamp");
      continue;
    }
    rec.timestamp = *ts;
    rec.sensor_id = std::string(trim(fields[c_sensor]));

    auto optional_number = [&](std::size_t col, const char* what, std::optional<double>& dst) {
      const auto f = trim(fields[col]);
      if (is_missing(f)) return true;
      const auto v = parse_double(f);
      if (!v) {
        reject(std::string("bad ") + what);
        return false;
      }
      dst = *v;
      return true;
    };
    if (!optional_number(c_speed, "speed", rec.speed) || !optional_number(c_count, "count", rec.count) ||
        !optional_number(c_occ, "occupancy", rec.occupancy))
      continue;
    if (rec.speed && !std::isfinite(*rec.speed)) {
      reject("speed must be finite");
      continue;
    }
    if (rec.count && !(*rec.count >= 0.0)) {
      reject("count must be non-negative");
      continue;
    }
    if (rec.occupancy && !(*rec.occupancy >= 0.0 && *rec.occupancy <= 100.0)) {
      reject("occupancy " + sig6(*rec.occupancy) + " outside [0, 100]");
      continue;
    }
    if (c_regime) {
      const auto f = trim(fields[*c_regime]);
      if (!is_missing(f)) {
        rec.regime = parse_regime(f);
        if (!rec.regime) {
          reject("bad regime label '" + std::string(f) + "'");
          continue;
        }
      }
    }
    bool ok = true;
    for (const auto c : c_reg) {
      const auto v = parse_double(fields[c]);
      if (!v) {
        reject("bad regressor value");
        ok = false;
        break;
      }
      rec.regressors.push_back(*v);
    }
    if (!ok) continue;
    if (last_ts && rec.timestamp <= *last_ts) {
      reject("timestamp not increasing");
      continue;
    }
    if (last_ts && rec.timestamp - *last_ts != schema.cadence_seconds)
      result.gap_indices.push_back(result.records.size());
    last_ts = rec.timestamp;
    if (rec.speed && *rec.speed < 0.0) result.warnings.push_back({line_no, "negative speed"});
    result.records.push_back(std::move(rec));
  }
  return result;
}

inline LoadResult load_measurements(const std::filesystem::path& path, const CsvSchema& schema = {}) {
  if (!std::filesystem::exists(path))
    throw Error(ErrorCode::FileNotFound, "no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_measurements(in, schema);
}

/// Extra numeric columns appended after the standard ones (e.g. true states).
using ExtraColumns = std::vector<std::pair<std::string, std::vector<double>>>;

/// Writes records with full round-trip precision.
inline void write_measurements(const std::filesystem::path& path, const std::vector<MeasurementRecord>& records,
                               const CsvSchema& schema = {}, const ExtraColumns& extra = {}) {
  using namespace io_detail;
  bool with_regime = false;
  for (const auto& r : records) with_regime = with_regime || r.regime.has_value();
  for (const auto& [name, values] : extra)
    if (values.size() != records.size())
      throw Error(ErrorCode::DimensionMismatch, "extra column '" + name + "' has the wrong length");

  auto out = open_for_write(path);
  out << schema.timestamp_column << ',' << schema.sensor_column << ',' << schema.speed_column << ','
      << schema.count_column << ',' << schema.occupancy_column;
  if (with_regime) out << ',' << schema.regime_column;
  for (const auto& c : schema.regressor_columns) out << ',' << c;
  for (const auto& [name, values] : extra) out << ',' << name;
  out << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? exact(*v) : std::string(); };
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.regressors.size() != schema.regressor_columns.size())
      throw Error(ErrorCode::DimensionMismatch, "record regressors do not match the schema");
    out << r.timestamp << ',' << r.sensor_id << ',' << opt(r.speed) << ',' << opt(r.count) << ','
        << opt(r.occupancy);
    if (with_regime) out << ',' << (r.regime ? regime_name(*r.regime) : "");
    for (double v : r.regressors) out << ',' << exact(v);
    for (const auto& [name, values] : extra) out << ',' << exact(values[i]);
    out << '\n';
  }
  finish(out, path);
}

// ---------------------------------------------------------------------------
// Posterior summaries

enum class SummaryFormat { Csv, JsonLines };

namespace io_detail {

inline std::vector<std::pair<std::string, std::string>> summary_fields(const PosteriorSummary& s) {
  std::vector<std::pair<std::string, std::string>> f{
      {"t", std::to_string(s.t)},
      {"mean_speed", sig6(s.mean_speed)},
      {"q05", sig6(s.speed_quantiles[0])},
      {"q50", sig6(s.speed_quantiles[1])},
      {"q95", sig6(s.speed_quantiles[2])},
      {"p_breakdown", sig6(s.regime_probs[0])},
      {"p_freeflow", sig6(s.regime_probs[1])},
      {"p_recovery", sig6(s.regime_probs[2])},
      {"mean_rate", sig6(s.mean_rate)},
      {"ess", sig6(s.ess)},
  };
  if (s.params) {
    const auto& p = *s.params;
    for (Regime r : kRegimes)
      f.emplace_back("v_" + std::string(regime_name(r)), sig6(p.v_mean[regime_index(r)]));
    for (Regime r : kRegimes)
      f.emplace_back("v_sd_" + std::string(regime_name(r)), sig6(p.v_sd[regime_index(r)]));
    for (Eigen::Index j = 0; j < p.gamma_mean.size(); ++j) {
      f.emplace_back("gamma_" + std::to_string(j), sig6(p.gamma_mean(j)));
      f.emplace_back("gamma_sd_" + std::to_string(j), sig6(p.gamma_sd(j)));
    }
  }
  return f;
}

inline const std::vector<std::string>& base_summary_columns() {
  static const std::vector<std::string> cols{"t",           "mean_speed", "q05",        "q50",
                                             "q95",         "p_breakdown", "p_freeflow", "p_recovery",
                                             "mean_rate",   "ess"};
  return cols;
}

inline std::string json_value(const std::string& v) {
  return (v == "nan" || v == "inf" || v == "-inf") ? "null" : v;
}

}  // namespace io_detail

inline void write_summaries(std::ostream& out, const std::vector<PosteriorSummary>& rows,
                            SummaryFormat format) {
  using namespace io_detail;
  if (format == SummaryFormat::Csv) {
    std::vector<std::string> header = base_summary_columns();
    if (!rows.empty()) {
      const auto f = summary_fields(rows.front());
      header.clear();
      for (const auto& [k, v] : f) header.push_back(k);
    }
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& row : rows) {
      const auto f = summary_fields(row);
      for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << f[i].second;
      out << '\n';
    }
  } else {
    for (const auto& row : rows) {
      const auto f = summary_fields(row);
      out << '{';
      for (std::size_t i = 0; i < f.size(); ++i)
        out << (i ? "," : "") << '"' << f[i].first << "\":" << json_value(f[i].second);
      out << "}\n";
    }
  }
}

inline void write_summaries(const std::filesystem::path& path, const std::vector<PosteriorSummary>& rows,
                            SummaryFormat format = SummaryFormat::Csv) {
  auto out = io_detail::open_for_write(path);
  write_summaries(out, rows, format);
  io_detail::finish(out, path);
}

/// Reads the standard columns of a summary CSV (parameter columns are skipped).
inline std::vector<PosteriorSummary> read_summaries(const std::filesystem::path& path) {
  using namespace io_detail;
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::FileNotFound, "no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyFile, "summary file is empty");
  const auto header = split(line);
  const auto& base = base_summary_columns();
  if (header.size() < base.size())
    throw Error(ErrorCode::HeaderMismatch, "summary header too short");
  for (std::size_t i = 0; i < base.size(); ++i)
    if (trim(header[i]) != base[i]) throw Error(ErrorCode::HeaderMismatch, "unexpected summary column");
  std::vector<PosteriorSummary> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw Error(ErrorCode::HeaderMismatch, "ragged summary row");
    auto num = [&](std::size_t i) {
      const auto v = parse_double(f[i]);
      return v ? *v : std::nan("");
    };
    PosteriorSummary s;
    s.t = static_cast<std::size_t>(parse_int(f[0]).value_or(0));
    s.mean_speed = num(1);
    s.speed_quantiles = {num(2), num(3), num(4)};
    s.regime_probs = {num(5), num(6), num(7)};
    s.mean_rate = num(8);
    s.ess = num(9);
    rows.push_back(s);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Baseline rows: t,method,deviation,p_breakdown,p_freeflow,p_recovery
// The regime columns are one-hot so they line up with the filter's output.

struct BaselineRun {
  std::string method;
  baselines::Series deviation;
  std::vector<std::optional<Regime>> regimes;
};

inline void write_baselines(const std::filesystem::path& path, const std::vector<BaselineRun>& runs) {
  using namespace io_detail;
  auto out = open_for_write(path);
  out << "t,method,deviation,p_breakdown,p_freeflow,p_recovery\n";
  for (const auto& run : runs) {
    for (std::size_t i = 0; i < run.deviation.size(); ++i) {
      out << (i + 1) << ',' << run.method << ',' << (run.deviation[i] ? sig6(*run.deviation[i]) : "");
      for (Regime r : kRegimes) {
        out << ',';
        if (run.regimes[i]) out << (*run.regimes[i] == r ? "1" : "0");
      }
      out << '\n';
    }
  }
  finish(out, path);
}

}  // namespace flowtrack
