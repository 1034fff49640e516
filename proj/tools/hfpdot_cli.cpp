#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hfpdot/cli.hpp"

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::optional<std::string> format;
  bool timing = false;
};

void add_common(CLI::App* app, Common& common, bool allow_bin) {
  app->add_option("--config", common.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app->add_option("--seed", common.seed, "Override the config seed");
  app->add_option("--out", common.out, "Output directory");
  app->add_option("--workers", common.workers, "Sampler worker threads")->check(CLI::PositiveNumber);
  auto* format = app->add_option("--format", common.format, "Output format");
  if (allow_bin) {
    format->check(CLI::IsMember({"csv", "json", "bin"}));
  } else {
    format->check(CLI::IsMember({"csv", "json"}));
  }
  app->add_flag("--timing", common.timing, "Include wall-clock timings in reports");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical fully probabilistic design for optimal transport"};
  app.require_subcommand(1);

  Common common;
  std::string fairness_kind;
  std::string grid_sweep = "all";

  auto* sinkhorn = app.add_subcommand("sinkhorn", "EOT plan between the nominal marginals");
  add_common(sinkhorn, common, false);
  auto* potentials = app.add_subcommand("potentials", "Solve for the Kantorovitch potentials");
  add_common(potentials, common, false);
  auto* sample = app.add_subcommand("sample", "Draw plans from the optimal hyperprior");
  add_common(sample, common, true);
  auto* fairness = app.add_subcommand("fairness", "Fairness experiments");
  fairness->require_subcommand(1);
  for (const char* kind : {"frequency", "diversity", "markov"}) {
    auto* sub = fairness->add_subcommand(kind);
    add_common(sub, common, false);
    sub->callback([&fairness_kind, kind] { fairness_kind = kind; });
  }
  auto* repair = app.add_subcommand("repair", "Compare repair schemes");
  add_common(repair, common, false);
  auto* grid = app.add_subcommand("grid2x2", "Marginal densities of 2x2 hyperpriors");
  add_common(grid, common, false);
  grid->add_option("sweep", grid_sweep, "lambda, nominal, epsilon or all")
      ->check(CLI::IsMember({"lambda", "nominal", "epsilon", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : hfpdot::cli::kExitValidation;
  }

  std::string command;
  hfpdot::cli::CommandOptions options;
  options.timing = common.timing;
  options.format = common.format;
  for (auto* sub : {sinkhorn, potentials, sample, fairness, repair, grid}) {
    if (sub->parsed()) command = sub->get_name();
  }
  if (command == "fairness") options.subexperiment = fairness_kind;
  if (command == "grid2x2") options.subexperiment = grid_sweep;

  try {
    hfpdot::cli::ExperimentConfig config =
        common.config_path.empty() ? hfpdot::cli::ExperimentConfig() : hfpdot::cli::ExperimentConfig::load(common.config_path);
    if (common.seed) config.seed = *common.seed;
    if (common.out) config.output.directory = *common.out;
    if (common.workers) config.sampler.workers = *common.workers;
    const auto result = hfpdot::cli::run_command(command, config, options);
    for (const auto& file : result.files) std::cout << file.string() << '\n';
    std::cout << result.summary << '\n';
    return hfpdot::cli::kExitSuccess;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return hfpdot::cli::exit_code_for_current_exception();
  }
}
