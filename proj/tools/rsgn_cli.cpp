// rsgn: experiment driver for randomised subspace Gauss-Newton.
//
//   rsgn run --config <path> [--out <dir>] [--workers <n>]
//   rsgn summarize --trace <path> [--f-target <value>]
//
// Exit status: 0 success, 1 usage or unexpected error, 2 config error,
// 3 dataset error.

#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "rsgn/rsgn.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kDatasetError = 3;

int run_command(const std::string& config, const std::string& out, int workers) {
  rsgn::ExperimentSpec spec;
  try {
    spec = rsgn::load_experiment_spec(config);
  } catch (const rsgn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  try {
    rsgn::RunOptions opts;
    if (!out.empty()) opts.out_dir = out;
    opts.workers = workers;
    const auto result = rsgn::run_experiment(spec, opts);
    int failures = 0;
    for (const auto& job : result.runs) {
      if (job.trace.termination == rsgn::Termination::NumericalFailure) ++failures;
    }
    std::cout << "ran " << result.runs.size() << " runs, " << result.rows.size()
              << " trace rows -> " << opts.out_dir.value_or(spec.output) << '\n';
    if (failures) std::cout << failures << " run(s) ended in numerical_failure\n";
    return 0;
  } catch (const rsgn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const rsgn::ParseError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return kDatasetError;
  } catch (const rsgn::ValidationError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return kDatasetError;
  }
}

int summarize_command(const std::string& trace_path, double f_target) {
  std::ifstream in(trace_path);
  if (!in) {
    std::cerr << "cannot open trace '" << trace_path << "'\n";
    return 1;
  }
  try {
    const auto rows = rsgn::read_trace_csv(in);
    std::optional<double> target;
    if (f_target > 0.0) target = f_target;
    std::cout << rsgn::to_json(rsgn::summarize(rows, target)).dump(2) << '\n';
    return 0;
  } catch (const rsgn::ParseError& e) {
    std::cerr << "trace parse error: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Randomised subspace Gauss-Newton experiment driver"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  int workers = 1;
  auto* run = app.add_subcommand("run", "Run an experiment sweep");
  run->add_option("--config", config, "Experiment config (JSON or key/value)")->required();
  run->add_option("--out", out, "Output directory (overrides the config)");
  run->add_option("--workers", workers, "Concurrent cells")->check(CLI::PositiveNumber);

  std::string trace;
  double f_target = 1e-5;
  auto* summarize = app.add_subcommand("summarize", "Aggregate a trace CSV");
  summarize->add_option("--trace", trace, "Trace CSV written by 'run'")->required();
  summarize->add_option("--f-target", f_target, "Objective target (<= 0 disables)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_command(config, out, workers);
    if (*summarize) return summarize_command(trace, f_target);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
