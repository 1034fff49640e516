#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfpdot/fairness.hpp"
#include "hfpdot/potentials.hpp"

namespace hfpdot::cli {

using nlohmann::json;

struct ProblemConfig {
  Index m = 20;
  Index n = 20;
  /// "euclidean-squared-grid", or an explicit matrix given inline
  /// (`cost_matrix`) or as a CSV file (`cost_file`).
  std::string cost = "euclidean-squared-grid";
  std::optional<Matrix> cost_matrix;
  std::string cost_file;
  double epsilon = 1e-3;
  /// "uniform", an explicit weight array, or {"gaussian": {"mean", "sd"}}
  /// over the nodes 0..d-1.
  json mu0 = {{"gaussian", {{"mean", 8.5}, {"sd", 2.0}}}};
  json nu0 = {{"gaussian", {{"mean", 10.5}, {"sd", 2.0}}}};
  double eta = 2.0;
  double zeta = 2.0;
  Pair lambda_ideal = Pair(0.5, 0.5);
  std::optional<double> alpha;
  /// Feature supports for repair; default to the grid nodes 0..d-1.
  std::optional<Vector> support_x;
  std::optional<Vector> support_y;
};

struct OutputConfig {
  std::string directory = "out";
  std::vector<std::string> formats = {"csv", "json"};
};

struct ExperimentSettings {
  /// Fixed potentials; when absent, commands that need a hyperprior solve
  /// for them with the solver block.
  std::optional<Pair> lambda;
  std::size_t n_samples = 100;
  std::vector<std::size_t> frequency_sizes = {10, 50, 100};
  std::optional<double> threshold;
  std::vector<double> diversity_lambdas = {0.05, 1.0, 10.0, 100.0};
  std::size_t runs = 20;
  /// Defaults to n / 2 (node 10 on the 20-node grid).
  std::optional<Index> markov_y_index;
  std::size_t markov_runs = 100;
  std::vector<std::string> schemes = {"deterministic_eot", "randomized_hfpd", "nominal_ot"};
  std::size_t pairs = 50;
  std::size_t scheme_count = 50;
  double w0 = 0.5;
  double w1 = 0.5;
  std::size_t grid_points = 50;
  std::size_t quadrature_order = 64;
  std::vector<double> grid_lambdas = {0.05, 10.0, 100.0};
  std::vector<std::pair<Vector, Vector>> grid_nominals;
  std::vector<double> grid_epsilons = {0.1, 0.5, 10.0};
  Pair grid_fixed_lambda = Pair(1.0, 1.0);
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ProblemConfig problem;
  HmcConfig sampler;
  SolverOptions solver;
  OutputConfig output;
  ExperimentSettings experiment;

  ExperimentConfig();

  /// Strict parse: unknown keys and type mismatches raise ValidationError.
  static ExperimentConfig from_json(const json& doc);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Fully resolved configuration, defaults included.
  json canonical() const;
  /// FNV-1a of the canonical JSON, excluding output location and worker
  /// count (neither changes results), as 16 hex digits.
  std::string hash() const;

  /// Checks every module precondition reachable from the config.
  void validate() const;

  CostMatrix cost() const;
  DiscreteDistribution mu0() const;
  DiscreteDistribution nu0() const;
  IdealDesign ideal() const;
  KnowledgeConstraints constraints() const;
  Supports supports() const;
};

/// Weights over nodes 0..size-1 from a marginal spec.
DiscreteDistribution resolve_marginal(const json& spec, Index size);

std::uint64_t fnv1a(const std::string& text);

struct CommandOptions {
  std::string subexperiment;
  /// "csv" or "json"; "bin" is accepted for samples.
  std::optional<std::string> format;
  bool timing = false;
};

struct CommandResult {
  std::vector<std::filesystem::path> files;
  /// One-line human summary for stdout.
  std::string summary;
};

CommandResult cmd_sinkhorn(const ExperimentConfig& config, const CommandOptions& options);
CommandResult cmd_potentials(const ExperimentConfig& config, const CommandOptions& options);
CommandResult cmd_sample(const ExperimentConfig& config, const CommandOptions& options);
CommandResult cmd_fairness(const ExperimentConfig& config, const CommandOptions& options);
CommandResult cmd_repair(const ExperimentConfig& config, const CommandOptions& options);
CommandResult cmd_grid2x2(const ExperimentConfig& config, const CommandOptions& options);

CommandResult run_command(const std::string& name, const ExperimentConfig& config, const CommandOptions& options);

inline constexpr int kExitSuccess = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitConvergence = 3;
inline constexpr int kExitSamplerHealth = 4;

/// Maps the in-flight exception to a process exit code.
int exit_code_for_current_exception() noexcept;

/// Thrown by cmd_potentials when the solver stops at max_outer; the report
/// has already been written.
class NonConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace hfpdot::cli
