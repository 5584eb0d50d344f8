// ensemble-forge: trains ensembles of small MLPs on MNIST and writes
// error-vs-iterations / error-vs-N curves.
//
//   ensemble-forge run --config desk.conf [--variant plain] [--n-models 64] ...
//
// Exit codes: 0 success, 1 config error, 2 data error, 3 runtime failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ensemble_forge/ensemble_forge.hpp"

namespace ef = ensemble_forge;

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDataError = 2, kRuntimeError = 3 };

struct Overrides {
  std::string config_path;
  std::vector<std::string> variants;
  bool resume = false;
  // Flag name -> value, only for flags actually given.
  std::vector<std::pair<std::string, std::string>> values;
};

int data_phase_exit(const ef::Error& e) {
  switch (e.kind()) {
    case ef::ErrorKind::count_too_large:
    case ef::ErrorKind::config_invalid:
      return kConfigError;
    default:
      return kDataError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parallel local-model ensembles with optional per-model input masking"};
  app.require_subcommand(1);
  auto* run = app.add_subcommand("run", "Run the configured experiments and write CSV outputs");

  Overrides cli;
  run->add_option("--config", cli.config_path, "key=value configuration file")->required();
  run->add_option("--variant", cli.variants, "traditional|plain|bootstrap (repeatable)");
  run->add_flag("--resume", cli.resume, "Reuse completed models found in --cache-dir");

  const std::vector<std::string> valued = {"data-dir",     "output-dir",   "n-models",      "n-grid",
                                           "checkpoints",  "train-subset", "test-subset",   "master-seed",
                                           "learning-rate", "workers",     "cache-dir",     "init-scale",
                                           "activation",   "mask-domain",  "record-wall-time"};
  std::vector<std::optional<std::string>> given(valued.size());
  for (std::size_t i = 0; i < valued.size(); ++i) run->add_option("--" + valued[i], given[i]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  ef::ExperimentConfig cfg;
  try {
    cfg = ef::load_config_file(cli.config_path);
    for (std::size_t i = 0; i < valued.size(); ++i)
      if (given[i]) ef::apply_setting(cfg, valued[i], *given[i]);
    if (!cli.variants.empty()) {
      std::string joined;
      for (const auto& v : cli.variants) joined += (joined.empty() ? "" : ",") + v;
      ef::apply_setting(cfg, "variant", joined);
    }
    if (cli.resume) cfg.resume = true;
    if (cfg.resume && !cfg.cache_dir) throw ef::Error(ef::ErrorKind::config_invalid, "--resume needs --cache-dir");
    cfg.validate();
  } catch (const ef::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }

  std::optional<ef::Experiment> experiment;
  try {
    experiment.emplace(ef::Experiment::load(cfg));
  } catch (const ef::Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data_phase_exit(e);
  }

  try {
    std::cerr << "train rows " << experiment->train().size() << ", test rows " << experiment->test().size()
              << ", workers " << cfg.workers << '\n';
    const auto result = experiment->run_and_write();
    for (const auto& row : result.rows)
      std::cerr << ef::to_string(row.variant) << " iter=" << row.iteration << " N=" << row.n
                << " error=" << row.error << '\n';
    std::cerr << "wrote " << (cfg.output_dir / "curves.csv").string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
