#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "flowtrack/app.hpp"

namespace {

std::pair<double, double> parse_thresholds(const std::string& s) {
  const auto parts = flowtrack::io_detail::split(s);
  if (parts.size() != 2) throw CLI::ValidationError("--thresholds", "expected two values 'down,up'");
  const auto lo = flowtrack::io_detail::parse_double(parts[0]);
  const auto hi = flowtrack::io_detail::parse_double(parts[1]);
  if (!lo || !hi) throw CLI::ValidationError("--thresholds", "values must be numbers");
  return {*lo, *hi};
}

}  // namespace

int main(int argc, char** argv) {
  using namespace flowtrack;
  CLI::App app{"Regime-switching traffic speed filter"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  RunConfig rc;
  std::uint64_t seed = 0;
  std::string mode = "adapted", resampling = "multinomial", format = "csv", thresholds = "-0.1,0.1";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", rc.config, "model configuration file");
    sub->add_option("--output,-o", rc.output, "output file")->required();
  };
  auto add_input = [&](CLI::App* sub) {
    sub->add_option("--input,-i", rc.input, "measurement CSV")->required();
  };
  auto add_filter = [&](CLI::App* sub) {
    add_common(sub);
    add_input(sub);
    sub->add_option("--seed", seed, "random seed")->required();
    sub->add_option("--particles,-n", rc.particles, "number of particles")->check(CLI::PositiveNumber);
    sub->add_option("--mode", mode, "regime propagation")->check(CLI::IsMember({"adapted", "prior"}));
    sub->add_option("--resampling", resampling)->check(CLI::IsMember({"multinomial", "systematic"}));
    sub->add_option("--threads", rc.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--format", format, "summary format")->check(CLI::IsMember({"csv", "jsonl"}));
  };

  auto* sim = app.add_subcommand("simulate", "draw a synthetic day from the model");
  add_common(sim);
  sim->add_option("--seed", seed, "random seed")->required();
  sim->add_option("--steps,-T", rc.steps, "number of time steps");
  sim->add_option("--start", rc.start_epoch, "epoch seconds of the first step");
  sim->add_option("--sensor", rc.sensor_id, "sensor id written to each row");

  auto* filt = app.add_subcommand("filter", "run the particle filter");
  add_filter(filt);
  auto* learn = app.add_subcommand("learn", "run the filter with parameter learning");
  add_filter(learn);

  auto* base = app.add_subcommand("baseline", "mean, difference and quantile filters");
  add_common(base);
  add_input(base);
  base->add_option("--window,-w", rc.window, "trailing window length");
  base->add_option("--thresholds", thresholds, "classification thresholds 'down,up'");
  base->add_option("--quantile,-q", rc.quantile, "quantile for the quantile filter")->check(CLI::Range(0.0, 1.0));

  auto* fit = app.add_subcommand("fit-kernel", "MAP transition matrix from labelled data");
  add_common(fit);
  add_input(fit);
  fit->add_flag("--by-period", rc.by_period, "fit one matrix per (period, day)");

  try {
    app.parse(argc, argv);
    auto* sub = app.get_subcommands().front();
    rc.command = sub->get_name();
    if (auto* opt = sub->get_option_no_throw("--seed"); opt && opt->count() > 0) rc.seed = seed;
    rc.mode = mode == "prior" ? PropagationMode::Prior : PropagationMode::Adapted;
    rc.resampling = resampling == "systematic" ? ResamplingScheme::Systematic : ResamplingScheme::Multinomial;
    rc.format = format == "jsonl" ? SummaryFormat::JsonLines : SummaryFormat::Csv;
    std::tie(rc.down_threshold, rc.up_threshold) = parse_thresholds(thresholds);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "flowtrack: error=UsageError exit=2 " << e.what() << '\n';
    return 2;
  }
  return run(rc, std::cerr);
}
