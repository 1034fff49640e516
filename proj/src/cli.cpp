#include "hfpdot/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace hfpdot::cli {
namespace {

namespace fs = std::filesystem;

std::string number(double x) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.17g", x);
  return buffer;
}

void check_keys(const json& object, const std::string& where, std::initializer_list<const char*> known) {
  if (!object.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& item : object.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; })) {
      throw ValidationError(where + ": unknown key '" + item.key() + "'");
    }
  }
}

template <typename T>
T read(const json& value, const std::string& where) {
  try {
    return value.get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + ": " + e.what());
  }
}

template <typename T>
void read_into(const json& object, const char* key, const std::string& where, T& target) {
  if (object.contains(key)) target = read<T>(object.at(key), where + "." + key);
}

Pair read_pair(const json& value, const std::string& where) {
  const auto v = read<std::vector<double>>(value, where);
  if (v.size() != 2) throw ValidationError(where + ": expected two numbers");
  return Pair(v[0], v[1]);
}

Vector read_vector(const json& value, const std::string& where) {
  const auto v = read<std::vector<double>>(value, where);
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

Matrix read_matrix(const json& value, const std::string& where) {
  const auto rows = read<std::vector<std::vector<double>>>(value, where);
  if (rows.empty() || rows.front().empty()) throw ValidationError(where + ": empty matrix");
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw ValidationError(where + ": ragged matrix");
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return out;
}

Matrix read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cost file '" + path.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ValidationError("cost file '" + path.string() + "': bad number '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  json j = rows;
  return read_matrix(j, "cost file '" + path.string() + "'");
}

json vector_json(const Vector& v) {
  json out = json::array();
  for (Index k = 0; k < v.size(); ++k) out.push_back(v[k]);
  return out;
}

json matrix_json(const Matrix& m) {
  json out = json::array();
  for (Index i = 0; i < m.rows(); ++i) out.push_back(vector_json(m.row(i).transpose()));
  return out;
}

json pair_json(const Pair& p) { return json::array({p[0], p[1]}); }

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(seed ^ splitmix64(a * 0x100000001b3ULL + b + 1));
}

// Stream tags keep the seeded sub-experiments independent of each other.
enum Stream : std::uint64_t {
  kStreamSample = 1,
  kStreamFrequency,
  kStreamDiversity,
  kStreamMarkov,
  kStreamRepairPairs,
  kStreamRepairSampler,
  kStreamDistributional,
  kStreamPotentials,
};

struct Writer {
  const ExperimentConfig& config;
  fs::path directory;
  std::vector<std::string> formats;
  CommandResult result;

  Writer(const ExperimentConfig& c, const CommandOptions& options)
      : config(c), directory(c.output.directory), formats(c.output.formats) {
    if (options.format) formats = {*options.format};
    fs::create_directories(directory);
  }

  bool wants(const std::string& format) const {
    return std::find(formats.begin(), formats.end(), format) != formats.end();
  }

  std::vector<std::string> preamble() const {
    return {"config_hash=" + config.hash(), "seed=" + std::to_string(config.seed)};
  }

  fs::path open(const std::string& name, std::ofstream& out, bool binary = false) {
    const fs::path path = directory / name;
    out.open(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    result.files.push_back(path);
    return path;
  }

  void report(const std::string& stem, json body) {
    body["config_hash"] = config.hash();
    body["seed"] = config.seed;
    std::ofstream out;
    open(stem + ".json", out);
    out << body.dump(2) << '\n';
  }

  // Rows of numbers or strings, emitted in each requested tabular format.
  void table(const std::string& stem, const std::vector<std::string>& columns, const std::vector<json>& rows) {
    if (wants("csv")) {
      std::ofstream out;
      open(stem + ".csv", out);
      for (const auto& line : preamble()) out << "# " << line << '\n';
      for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
      out << '\n';
      for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
          if (c) out << ',';
          const json& cell = row[c];
          if (cell.is_number_float()) {
            out << number(cell.get<double>());
          } else if (cell.is_string()) {
            out << cell.get<std::string>();
          } else {
            out << cell.dump();
          }
        }
        out << '\n';
      }
    }
    if (wants("json")) {
      json body = {{"columns", columns}, {"rows", rows}};
      report(stem, std::move(body));
    }
  }

  void grid(const std::string& stem, const Matrix& values) {
    std::vector<std::string> columns;
    for (Index j = 0; j < values.cols(); ++j) columns.push_back("j" + std::to_string(j));
    std::vector<json> rows;
    for (Index i = 0; i < values.rows(); ++i) rows.push_back(vector_json(values.row(i).transpose()));
    table(stem, columns, rows);
  }
};

HmcConfig sampler_with_seed(const ExperimentConfig& config, std::uint64_t seed) {
  HmcConfig c = config.sampler;
  c.seed = seed;
  return c;
}

struct Potentials {
  Pair lambda;
  std::string source;
};

Potentials resolve_potentials(const ExperimentConfig& config) {
  if (config.experiment.lambda) return {*config.experiment.lambda, "config"};
  const SolveResult solved = solve_potentials(
      config.constraints(), sampler_with_seed(config, derive_seed(config.seed, kStreamPotentials)), config.solver);
  return {solved.params.potentials, solved.report.converged ? "solved" : "solved-unconverged"};
}

HyperpriorParams params_for(const ExperimentConfig& config, const Pair& lambda) {
  return HyperpriorParams(config.constraints(), lambda);
}

}  // namespace

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

DiscreteDistribution resolve_marginal(const json& spec, Index size) {
  if (size < 2) throw ValidationError("marginal: need at least two nodes");
  if (spec.is_string()) {
    if (spec.get<std::string>() != "uniform") throw ValidationError("marginal: unknown spec '" + spec.get<std::string>() + "'");
    return DiscreteDistribution::uniform(size);
  }
  if (spec.is_array()) {
    const Vector w = read_vector(spec, "marginal");
    if (w.size() != size) throw ValidationError("marginal: expected " + std::to_string(size) + " weights");
    return DiscreteDistribution(w);
  }
  if (spec.is_object()) {
    check_keys(spec, "marginal", {"gaussian"});
    const json& g = spec.at("gaussian");
    check_keys(g, "marginal.gaussian", {"mean", "sd"});
    if (!g.contains("mean") || !g.contains("sd")) throw ValidationError("marginal.gaussian: needs mean and sd");
    const double mean = read<double>(g.at("mean"), "marginal.gaussian.mean");
    const double sd = read<double>(g.at("sd"), "marginal.gaussian.sd");
    if (!(sd > 0.0) || !std::isfinite(mean)) throw ValidationError("marginal.gaussian: sd must be positive");
    Vector w(size);
    for (Index k = 0; k < size; ++k) {
      const double z = (static_cast<double>(k) - mean) / sd;
      w[k] = std::exp(-0.5 * z * z);
    }
    if (!(w.array() > 0.0).all()) throw ValidationError("marginal.gaussian: weights underflow; widen sd");
    return DiscreteDistribution::normalized(w);
  }
  throw ValidationError("marginal: expected \"uniform\", an array or {\"gaussian\": ...}");
}

ExperimentConfig::ExperimentConfig() {
  const auto two = [](double a, double b) { return Vector((Vector(2) << a, b).finished()); };
  experiment.grid_nominals = {{two(0.9, 0.1), two(0.1, 0.9)}, {two(0.5, 0.5), two(0.5, 0.5)}, {two(0.1, 0.9), two(0.9, 0.1)}};
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  ExperimentConfig c;
  check_keys(doc, "config", {"seed", "problem", "sampler", "solver", "output", "experiment"});
  read_into(doc, "seed", "config", c.seed);

  if (doc.contains("problem")) {
    const json& p = doc.at("problem");
    check_keys(p, "problem",
               {"m", "n", "cost", "epsilon", "mu0", "nu0", "eta", "zeta", "lambda_ideal", "alpha", "supports"});
    read_into(p, "m", "problem", c.problem.m);
    read_into(p, "n", "problem", c.problem.n);
    read_into(p, "epsilon", "problem", c.problem.epsilon);
    read_into(p, "eta", "problem", c.problem.eta);
    read_into(p, "zeta", "problem", c.problem.zeta);
    if (p.contains("mu0")) c.problem.mu0 = p.at("mu0");
    if (p.contains("nu0")) c.problem.nu0 = p.at("nu0");
    if (p.contains("lambda_ideal")) c.problem.lambda_ideal = read_pair(p.at("lambda_ideal"), "problem.lambda_ideal");
    if (p.contains("alpha") && !p.at("alpha").is_null()) c.problem.alpha = read<double>(p.at("alpha"), "problem.alpha");
    if (p.contains("cost")) {
      const json& cost = p.at("cost");
      if (cost.is_string()) {
        c.problem.cost = cost.get<std::string>();
        if (c.problem.cost != "euclidean-squared-grid") {
          throw ValidationError("problem.cost: unknown cost '" + c.problem.cost + "'");
        }
      } else {
        check_keys(cost, "problem.cost", {"matrix", "file"});
        c.problem.cost = "explicit";
        if (cost.contains("matrix") == cost.contains("file")) {
          throw ValidationError("problem.cost: give exactly one of matrix or file");
        }
        if (cost.contains("matrix")) {
          c.problem.cost_matrix = read_matrix(cost.at("matrix"), "problem.cost.matrix");
        } else {
          c.problem.cost_file = read<std::string>(cost.at("file"), "problem.cost.file");
          c.problem.cost_matrix = read_matrix_csv(c.problem.cost_file);
        }
      }
    }
    if (p.contains("supports")) {
      const json& s = p.at("supports");
      check_keys(s, "problem.supports", {"x", "y"});
      if (s.contains("x")) c.problem.support_x = read_vector(s.at("x"), "problem.supports.x");
      if (s.contains("y")) c.problem.support_y = read_vector(s.at("y"), "problem.supports.y");
    }
  }

  if (doc.contains("sampler")) {
    const json& s = doc.at("sampler");
    check_keys(s, "sampler", {"step_size", "leapfrog_steps", "burn_in", "adaptation_steps", "target_accept", "chains",
                              "thin", "workers", "compute_ess"});
    read_into(s, "step_size", "sampler", c.sampler.step_size);
    read_into(s, "leapfrog_steps", "sampler", c.sampler.leapfrog_steps);
    read_into(s, "burn_in", "sampler", c.sampler.burn_in);
    read_into(s, "adaptation_steps", "sampler", c.sampler.adaptation_steps);
    read_into(s, "target_accept", "sampler", c.sampler.target_accept);
    read_into(s, "chains", "sampler", c.sampler.chains);
    read_into(s, "thin", "sampler", c.sampler.thin);
    read_into(s, "workers", "sampler", c.sampler.workers);
    read_into(s, "compute_ess", "sampler", c.sampler.compute_ess);
    if (s.contains("burn_in") && !s.contains("adaptation_steps")) {
      c.sampler.adaptation_steps = static_cast<int>(0.8 * c.sampler.burn_in);
    }
  }

  if (doc.contains("solver")) {
    const json& s = doc.at("solver");
    check_keys(s, "solver", {"tol", "n_samp", "max_outer", "common_random_numbers", "initial_lambda", "rho_max"});
    read_into(s, "tol", "solver", c.solver.tol);
    read_into(s, "n_samp", "solver", c.solver.n_samp);
    read_into(s, "max_outer", "solver", c.solver.max_outer);
    read_into(s, "common_random_numbers", "solver", c.solver.common_random_numbers);
    read_into(s, "rho_max", "solver", c.solver.rho_max);
    if (s.contains("initial_lambda")) c.solver.initial_lambda = read_pair(s.at("initial_lambda"), "solver.initial_lambda");
  }

  if (doc.contains("output")) {
    const json& o = doc.at("output");
    check_keys(o, "output", {"directory", "formats"});
    read_into(o, "directory", "output", c.output.directory);
    read_into(o, "formats", "output", c.output.formats);
  }

  if (doc.contains("experiment")) {
    const json& e = doc.at("experiment");
    check_keys(e, "experiment",
               {"lambda", "n_samples", "frequency_sizes", "threshold", "diversity_lambdas", "runs", "markov_y_index",
                "markov_runs", "schemes", "pairs", "scheme_count", "w0", "w1", "grid_points", "quadrature_order",
                "grid_lambdas", "grid_nominals", "grid_epsilons", "grid_fixed_lambda"});
    auto& x = c.experiment;
    if (e.contains("lambda") && !e.at("lambda").is_null()) x.lambda = read_pair(e.at("lambda"), "experiment.lambda");
    read_into(e, "n_samples", "experiment", x.n_samples);
    read_into(e, "frequency_sizes", "experiment", x.frequency_sizes);
    if (e.contains("threshold") && !e.at("threshold").is_null()) {
      x.threshold = read<double>(e.at("threshold"), "experiment.threshold");
    }
    read_into(e, "diversity_lambdas", "experiment", x.diversity_lambdas);
    read_into(e, "runs", "experiment", x.runs);
    if (e.contains("markov_y_index") && !e.at("markov_y_index").is_null()) {
      x.markov_y_index = read<Index>(e.at("markov_y_index"), "experiment.markov_y_index");
    }
    read_into(e, "markov_runs", "experiment", x.markov_runs);
    read_into(e, "schemes", "experiment", x.schemes);
    read_into(e, "pairs", "experiment", x.pairs);
    read_into(e, "scheme_count", "experiment", x.scheme_count);
    read_into(e, "w0", "experiment", x.w0);
    read_into(e, "w1", "experiment", x.w1);
    read_into(e, "grid_points", "experiment", x.grid_points);
    read_into(e, "quadrature_order", "experiment", x.quadrature_order);
    read_into(e, "grid_lambdas", "experiment", x.grid_lambdas);
    read_into(e, "grid_epsilons", "experiment", x.grid_epsilons);
    if (e.contains("grid_fixed_lambda")) x.grid_fixed_lambda = read_pair(e.at("grid_fixed_lambda"), "experiment.grid_fixed_lambda");
    if (e.contains("grid_nominals")) {
      x.grid_nominals.clear();
      for (const auto& entry : e.at("grid_nominals")) {
        const auto pair = read<std::vector<std::vector<double>>>(entry, "experiment.grid_nominals");
        if (pair.size() != 2) throw ValidationError("experiment.grid_nominals: expected [mu0, nu0] pairs");
        x.grid_nominals.emplace_back(Eigen::Map<const Vector>(pair[0].data(), static_cast<Index>(pair[0].size())),
                                     Eigen::Map<const Vector>(pair[1].data(), static_cast<Index>(pair[1].size())));
      }
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config '" + path.string() + "': " + e.what());
  }
  return from_json(doc);
}

json ExperimentConfig::canonical() const {
  json cost = problem.cost_matrix ? json{{"matrix", matrix_json(*problem.cost_matrix)}} : json(problem.cost);
  json supports = json::object();
  if (problem.support_x) supports["x"] = vector_json(*problem.support_x);
  if (problem.support_y) supports["y"] = vector_json(*problem.support_y);
  json nominals = json::array();
  for (const auto& [mu, nu] : experiment.grid_nominals) nominals.push_back({vector_json(mu), vector_json(nu)});
  return {
      {"seed", seed},
      {"problem",
       {{"m", problem.m},
        {"n", problem.n},
        {"cost", cost},
        {"epsilon", problem.epsilon},
        {"mu0", problem.mu0},
        {"nu0", problem.nu0},
        {"eta", problem.eta},
        {"zeta", problem.zeta},
        {"lambda_ideal", pair_json(problem.lambda_ideal)},
        {"alpha", problem.alpha ? json(*problem.alpha) : json(nullptr)},
        {"supports", supports}}},
      {"sampler",
       {{"step_size", sampler.step_size},
        {"leapfrog_steps", sampler.leapfrog_steps},
        {"burn_in", sampler.burn_in},
        {"adaptation_steps", sampler.adaptation_steps},
        {"target_accept", sampler.target_accept},
        {"chains", sampler.chains},
        {"thin", sampler.thin},
        {"workers", sampler.workers},
        {"compute_ess", sampler.compute_ess}}},
      {"solver",
       {{"tol", solver.tol},
        {"n_samp", solver.n_samp},
        {"max_outer", solver.max_outer},
        {"common_random_numbers", solver.common_random_numbers},
        {"initial_lambda", pair_json(solver.initial_lambda)},
        {"rho_max", solver.rho_max}}},
      {"output", {{"directory", output.directory}, {"formats", output.formats}}},
      {"experiment",
       {{"lambda", experiment.lambda ? pair_json(*experiment.lambda) : json(nullptr)},
        {"n_samples", experiment.n_samples},
        {"frequency_sizes", experiment.frequency_sizes},
        {"threshold", experiment.threshold ? json(*experiment.threshold) : json(nullptr)},
        {"diversity_lambdas", experiment.diversity_lambdas},
        {"runs", experiment.runs},
        {"markov_y_index", experiment.markov_y_index ? json(*experiment.markov_y_index) : json(nullptr)},
        {"markov_runs", experiment.markov_runs},
        {"schemes", experiment.schemes},
        {"pairs", experiment.pairs},
        {"scheme_count", experiment.scheme_count},
        {"w0", experiment.w0},
        {"w1", experiment.w1},
        {"grid_points", experiment.grid_points},
        {"quadrature_order", experiment.quadrature_order},
        {"grid_lambdas", experiment.grid_lambdas},
        {"grid_nominals", nominals},
        {"grid_epsilons", experiment.grid_epsilons},
        {"grid_fixed_lambda", pair_json(experiment.grid_fixed_lambda)}}}};
}

std::string ExperimentConfig::hash() const {
  json doc = canonical();
  doc.erase("output");
  doc["sampler"].erase("workers");
  char buffer[17];
  std::snprintf(buffer, sizeof buffer, "%016llx", static_cast<unsigned long long>(fnv1a(doc.dump())));
  return buffer;
}

void ExperimentConfig::validate() const {
  if (problem.m < 2 || problem.n < 2) throw ValidationError("problem: m and n must be at least 2");
  if (!(problem.epsilon > 0.0) || !std::isfinite(problem.epsilon)) throw ValidationError("problem.epsilon must be positive");
  if (problem.cost_matrix && (problem.cost_matrix->rows() != problem.m || problem.cost_matrix->cols() != problem.n)) {
    throw ValidationError("problem.cost: matrix shape differs from (m, n)");
  }
  try {
    (void)constraints();
    sampler.validate();
    solver.validate();
  } catch (const ValidationError&) {
    throw;
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
  for (const auto& f : output.formats) {
    if (f != "csv" && f != "json" && f != "bin") throw ValidationError("output.formats: unknown format '" + f + "'");
  }
  const auto& x = experiment;
  if (x.lambda && (!((*x.lambda).array() >= 0.0).all() || !x.lambda->allFinite())) {
    throw ValidationError("experiment.lambda must be finite and nonnegative");
  }
  if (x.n_samples < 1) throw ValidationError("experiment.n_samples must be at least 1");
  if (x.frequency_sizes.empty() || *std::min_element(x.frequency_sizes.begin(), x.frequency_sizes.end()) < 1) {
    throw ValidationError("experiment.frequency_sizes must be positive");
  }
  if (x.runs < 1 || x.markov_runs < 1 || x.pairs < 1 || x.scheme_count < 1) {
    throw ValidationError("experiment: run and pair counts must be positive");
  }
  if (x.markov_y_index && (*x.markov_y_index < 0 || *x.markov_y_index >= problem.n)) throw ValidationError("experiment.markov_y_index out of range");
  for (const auto& s : x.schemes) (void)parse_repair_scheme(s);
  if (!(x.w0 >= 0.0 && x.w1 >= 0.0) || std::abs(x.w0 + x.w1 - 1.0) > 1e-12) {
    throw ValidationError("experiment: w0, w1 must be nonnegative and sum to one");
  }
  if (x.grid_points < 2) throw ValidationError("experiment.grid_points must be at least 2");
  if (x.quadrature_order < 8) throw ValidationError("experiment.quadrature_order must be at least 8");
  for (double e : x.grid_epsilons) {
    if (!(e > 0.0)) throw ValidationError("experiment.grid_epsilons must be positive");
  }
  for (double l : x.grid_lambdas) {
    if (!(l >= 0.0)) throw ValidationError("experiment.grid_lambdas must be nonnegative");
  }
  for (double l : x.diversity_lambdas) {
    if (!(l >= 0.0)) throw ValidationError("experiment.diversity_lambdas must be nonnegative");
  }
  if (problem.support_x && problem.support_x->size() != problem.m) throw ValidationError("problem.supports.x must have m entries");
  if (problem.support_y && problem.support_y->size() != problem.n) throw ValidationError("problem.supports.y must have n entries");
}

CostMatrix ExperimentConfig::cost() const {
  if (problem.cost_matrix) return CostMatrix(*problem.cost_matrix);
  return CostMatrix::squared_euclidean_grid(problem.m, problem.n);
}

DiscreteDistribution ExperimentConfig::mu0() const { return resolve_marginal(problem.mu0, problem.m); }
DiscreteDistribution ExperimentConfig::nu0() const { return resolve_marginal(problem.nu0, problem.n); }
IdealDesign ExperimentConfig::ideal() const { return gibbs_kernel(cost(), problem.epsilon); }

KnowledgeConstraints ExperimentConfig::constraints() const {
  return KnowledgeConstraints(mu0(), nu0(), problem.eta, problem.zeta, problem.lambda_ideal, ideal(), problem.alpha);
}

Supports ExperimentConfig::supports() const {
  Supports s;
  s.x = problem.support_x.value_or(Vector::LinSpaced(problem.m, 0.0, static_cast<double>(problem.m - 1)));
  s.y = problem.support_y.value_or(Vector::LinSpaced(problem.n, 0.0, static_cast<double>(problem.n - 1)));
  return s;
}

CommandResult cmd_sinkhorn(const ExperimentConfig& config, const CommandOptions& options) {
  config.validate();
  const CostMatrix cost = config.cost();
  const DiscreteDistribution mu0 = config.mu0();
  const DiscreteDistribution nu0 = config.nu0();
  const EotSolution solution = sinkhorn(mu0, nu0, config.ideal());
  Writer w(config, options);
  w.grid("plan", solution.plan.entries());
  const auto [mu, nu] = marginals(solution.plan);
  w.report("sinkhorn", {{"iterations", solution.iterations},
                        {"marginal_error", solution.marginal_error},
                        {"transport_cost", transport_cost(cost, solution.plan)},
                        {"epsilon", config.problem.epsilon},
                        {"row_marginal", vector_json(mu.weights())},
                        {"col_marginal", vector_json(nu.weights())}});
  w.result.summary = "sinkhorn: " + std::to_string(solution.iterations) + " iterations, marginal error " +
                     number(solution.marginal_error);
  return w.result;
}

CommandResult cmd_potentials(const ExperimentConfig& config, const CommandOptions& options) {
  config.validate();
  const SolveResult solved = solve_potentials(
      config.constraints(), sampler_with_seed(config, derive_seed(config.seed, kStreamPotentials)), config.solver);
  Writer w(config, options);
  json body = to_json(solved.report, options.timing);
  const DualState& last = solved.report.trajectory.back();
  body["newton_decrement"] = last.newton_decrement;
  w.report("potentials", std::move(body));
  w.result.summary = "potentials: lambda = (" + number(last.lambda[0]) + ", " + number(last.lambda[1]) +
                     "), decrement " + number(last.newton_decrement) +
                     (solved.report.converged ? "" : " (not converged)");
  if (!solved.report.converged) throw NonConvergenceError(w.result.summary);
  return w.result;
}

CommandResult cmd_sample(const ExperimentConfig& config, const CommandOptions& options) {
  config.validate();
  const Potentials potentials = resolve_potentials(config);
  const HyperpriorParams params = params_for(config, potentials.lambda);
  const HmcRun run = hmc_sample(HyperpriorDensity(params).target(),
                                sampler_with_seed(config, derive_seed(config.seed, kStreamSample)),
                                config.experiment.n_samples);
  Writer w(config, options);
  const std::uint64_t seed = config.seed;
  if (w.wants("csv")) {
    std::ofstream out;
    w.open("samples.csv", out);
    write_samples_csv(out, run.samples, w.preamble());
  }
  if (w.wants("bin")) {
    std::ofstream out;
    w.open("samples.bin", out, true);
    write_samples_binary(out, run.samples, seed);
  }
  if (w.wants("json")) {
    json samples = json::array();
    for (const auto& s : run.samples) samples.push_back(vector_json(s.flat()));
    w.report("samples", {{"rows", config.problem.m}, {"cols", config.problem.n}, {"samples", samples}});
  }
  const TransportPlan mean = expected_plan(run.samples);
  w.report("diagnostics", {{"lambda", pair_json(potentials.lambda)},
                           {"lambda_source", potentials.source},
                           {"n_samples", run.samples.size()},
                           {"sampler", to_json(run.diagnostics)},
                           {"expected_plan", matrix_json(mean.entries())}});
  w.result.summary = "sample: " + std::to_string(run.samples.size()) + " plans, acceptance " +
                     number(run.diagnostics.acceptance_rate);
  return w.result;
}

namespace {

CommandResult fairness_frequency(const ExperimentConfig& config, const CommandOptions& options) {
  const Pair lambda = config.experiment.lambda.value_or(Pair(0.05, 0.05));
  const auto& sizes = config.experiment.frequency_sizes;
  const std::size_t largest = *std::max_element(sizes.begin(), sizes.end());
  const HmcRun run = hmc_sample(HyperpriorDensity(params_for(config, lambda)).target(),
                                sampler_with_seed(config, derive_seed(config.seed, kStreamFrequency)), largest);
  Writer w(config, options);
  std::vector<json> summary;
  for (std::size_t n : sizes) {
    const FrequencyMap map =
        frequency_map(std::span<const TransportPlan>(run.samples.data(), n), config.experiment.threshold);
    w.grid("frequency_N" + std::to_string(n), map.probabilities);
    const Matrix se = map.standard_error();
    std::size_t within = 0;
    for (Index k = 0; k < map.probabilities.size(); ++k) {
      const double dev = std::abs(map.probabilities.data()[k] - 0.5);
      if (se.data()[k] > 0.0 ? dev / se.data()[k] < 4.0 : dev == 0.0) ++within;
    }
    summary.push_back({n, map.probabilities.mean(), map.threshold,
                       static_cast<double>(within) / static_cast<double>(map.probabilities.size())});
  }
  w.table("frequency_summary", {"N", "mean_frequency", "threshold", "fraction_within_4se_of_half"}, summary);
  w.result.summary = "fairness frequency: N = " + std::to_string(largest) + ", mean frequency " +
                     number(summary.back()[1].get<double>());
  return w.result;
}

CommandResult fairness_diversity(const ExperimentConfig& config, const CommandOptions& options) {
  const auto& lambdas = config.experiment.diversity_lambdas;
  std::vector<json> runs;
  std::vector<json> summary;
  std::vector<double> xs;
  std::vector<double> ys;
  const Index richness = config.problem.m * config.problem.n;
  bool in_range = true;
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    const HyperpriorParams params = params_for(config, Pair(lambdas[k], lambdas[k]));
    const PlanLogDensity target = HyperpriorDensity(params).target();
    std::vector<double> values;
    for (std::size_t r = 0; r < config.experiment.runs; ++r) {
      const HmcRun run = hmc_sample(target, sampler_with_seed(config, derive_seed(config.seed, kStreamDiversity, k * 100000 + r)),
                                    config.experiment.n_samples);
      const DiversityIndex d = diversity_index(run.samples);
      in_range = in_range && d.value >= 1.0 && d.value <= static_cast<double>(richness);
      runs.push_back({lambdas[k], r, d.value, d.standard_error});
      values.push_back(d.value);
      xs.push_back(lambdas[k]);
      ys.push_back(d.value);
    }
    const double mean = compensated_sum(values) / static_cast<double>(values.size());
    const double se = values.size() > 1 ? std::sqrt(sample_variance(values) / static_cast<double>(values.size())) : 0.0;
    summary.push_back({lambdas[k], mean, se});
  }
  Writer w(config, options);
  w.table("diversity_runs", {"lambda", "run", "index", "se"}, runs);
  w.table("diversity", {"lambda", "mean", "se"}, summary);
  json body = {{"richness", richness}, {"within_bounds", in_range}};
  if (xs.size() >= 3) {
    const Spearman s = spearman(xs, ys);
    body["spearman_rho"] = s.rho;
    body["spearman_p"] = s.p_value;
    w.result.summary = "fairness diversity: spearman rho " + number(s.rho) + ", p " + number(s.p_value);
  } else {
    w.result.summary = "fairness diversity: " + std::to_string(xs.size()) + " runs";
  }
  w.report("diversity_trend", std::move(body));
  return w.result;
}

CommandResult fairness_markov(const ExperimentConfig& config, const CommandOptions& options) {
  const Potentials potentials = resolve_potentials(config);
  const CostMatrix cost = config.cost();
  const TransportPlan exact = exact_ot_small(config.mu0(), config.nu0(), cost);
  const double w2sq = transport_cost(cost, exact);
  const PlanLogDensity target = HyperpriorDensity(params_for(config, potentials.lambda)).target();
  const Index y_index = config.experiment.markov_y_index.value_or(config.problem.n / 2);
  std::vector<json> rows;
  std::size_t strict = 0;
  for (std::size_t r = 0; r < config.experiment.markov_runs; ++r) {
    const HmcRun run = hmc_sample(target, sampler_with_seed(config, derive_seed(config.seed, kStreamMarkov, r)),
                                  config.experiment.n_samples);
    const MarkovBound b = markov_bound(run.samples, y_index, cost, w2sq);
    if (b.bound < b.empirical) ++strict;
    rows.push_back({r, b.bound, b.empirical, b.empirical_se, b.mean_cost});
  }
  Writer w(config, options);
  w.table("markov", {"run", "bound", "empirical", "empirical_se", "mean_cost"}, rows);
  const double fraction = static_cast<double>(strict) / static_cast<double>(rows.size());
  w.report("markov_summary", {{"w2sq", w2sq},
                              {"y_index", y_index},
                              {"lambda", pair_json(potentials.lambda)},
                              {"lambda_source", potentials.source},
                              {"fraction_bound_below_empirical", fraction}});
  w.result.summary = "fairness markov: bound < empirical in " + number(fraction) + " of runs";
  return w.result;
}

}  // namespace

CommandResult cmd_fairness(const ExperimentConfig& config, const CommandOptions& options) {
  config.validate();
  if (options.subexperiment == "frequency") return fairness_frequency(config, options);
  if (options.subexperiment == "diversity") return fairness_diversity(config, options);
  if (options.subexperiment == "markov") return fairness_markov(config, options);
  throw ValidationError("fairness: subexperiment must be frequency, diversity or markov");
}

CommandResult cmd_repair(const ExperimentConfig& config, const CommandOptions& options) {
  config.validate();
  if (config.problem.m != config.problem.n) throw ValidationError("repair: needs a square problem (m = n)");
  const Potentials potentials = resolve_potentials(config);
  const HyperpriorParams params = params_for(config, potentials.lambda);
  const Supports supports = config.supports();
  const DiscreteDistribution mu0 = config.mu0();
  const DiscreteDistribution nu0 = config.nu0();

  Rng rng(derive_seed(config.seed, kStreamRepairPairs));
  std::vector<MarginalPair> sequence;
  for (std::size_t t = 0; t < config.experiment.pairs; ++t) {
    sequence.push_back(sample_empirical_marginals(mu0, nu0, config.problem.eta, config.problem.zeta, rng));
  }
  std::vector<RepairScheme> schemes;
  for (const auto& s : config.experiment.schemes) schemes.push_back(parse_repair_scheme(s));
  const SchemeComparison comparison =
      compare_repair_schemes(sequence, schemes, params, supports,
                             sampler_with_seed(config, derive_seed(config.seed, kStreamRepairSampler)),
                             config.experiment.w0, config.experiment.w1);
  const DistributionalFairness distributional = run_distributional_fairness(
      params, sequence.front(), supports, config.experiment.scheme_count,
      sampler_with_seed(config, derive_seed(config.seed, kStreamDistributional)), config.experiment.w0,
      config.experiment.w1);

  Writer w(config, options);
  std::vector<json> rows;
  json summary = json::object();
  for (RepairScheme scheme : schemes) {
    const auto& results = comparison.at(scheme);
    std::vector<double> icd;
    std::vector<double> distortion;
    for (std::size_t t = 0; t < results.size(); ++t) {
      rows.push_back({to_string(scheme), t, results[t].icd, results[t].distortion});
      icd.push_back(results[t].icd);
      distortion.push_back(results[t].distortion);
    }
    const double n = static_cast<double>(results.size());
    summary[to_string(scheme)] = {{"icd_mean", compensated_sum(icd) / n},
                                  {"icd_variance", results.size() > 1 ? sample_variance(icd) : 0.0},
                                  {"distortion_mean", compensated_sum(distortion) / n},
                                  {"distortion_variance", results.size() > 1 ? sample_variance(distortion) : 0.0}};
  }
  w.table("repair", {"scheme", "pair", "icd", "distortion"}, rows);
  std::vector<json> draws;
  for (std::size_t s = 0; s < distributional.randomized.size(); ++s) {
    draws.push_back({s, distributional.randomized[s].icd, distributional.randomized[s].distortion});
  }
  w.table("repair_distributional", {"draw", "icd", "distortion"}, draws);
  w.report("repair_summary", {{"lambda", pair_json(potentials.lambda)},
                              {"lambda_source", potentials.source},
                              {"schemes", summary},
                              {"distributional_reference_icd", distributional.deterministic.icd},
                              {"distributional_reference_distortion", distributional.deterministic.distortion}});
  w.result.summary = "repair: " + std::to_string(sequence.size()) + " pairs, " + std::to_string(schemes.size()) + " schemes";
  return w.result;
}

CommandResult cmd_grid2x2(const ExperimentConfig& config, const CommandOptions& options) {
  config.validate();
  if (config.problem.m != 2 || config.problem.n != 2) throw ValidationError("grid2x2: needs a 2x2 problem");
  const auto& x = config.experiment;
  const std::string sweep = options.subexperiment.empty() ? "all" : options.subexperiment;
  if (sweep != "all" && sweep != "lambda" && sweep != "nominal" && sweep != "epsilon") {
    throw ValidationError("grid2x2: sweep must be lambda, nominal, epsilon or all");
  }
  const Grid2x2 grid = Grid2x2::uniform(x.grid_points);
  const QuadratureSpec quad(x.quadrature_order);
  const CostMatrix cost = config.cost();

  Writer w(config, options);
  std::vector<json> points;
  int written = 0;
  auto run_case = [&](const std::string& name, const DiscreteDistribution& mu0, const DiscreteDistribution& nu0,
                      double epsilon, const Pair& lambda) {
    const IdealDesign ideal = gibbs_kernel(cost, epsilon);
    const KnowledgeConstraints constraints(mu0, nu0, config.problem.eta, config.problem.zeta,
                                           config.problem.lambda_ideal, ideal, config.problem.alpha);
    const HyperpriorParams params(constraints, lambda);
    const double log_z = log_normalizer_2x2(params, quad);
    const Matrix field = marginal_density_grid_2x2(params, grid, quad) / std::exp(log_z);
    std::vector<json> rows;
    for (Index a = 0; a < grid.p11.size(); ++a) {
      for (Index b = 0; b < grid.p12.size(); ++b) rows.push_back({grid.p11[a], grid.p12[b], field(a, b)});
    }
    w.table("grid_" + name, {"p11", "p12", "density"}, rows);
    const TransportPlan mean = expected_plan_2x2(params, quad);
    const TransportPlan eot = sinkhorn(mu0, nu0, ideal).plan;
    points.push_back({name, lambda[0], lambda[1], mu0[0], nu0[0], epsilon, log_z, mean(0, 0), mean(0, 1), eot(0, 0),
                      eot(0, 1)});
    ++written;
  };

  if (sweep == "all" || sweep == "lambda") {
    for (std::size_t a = 0; a < x.grid_lambdas.size(); ++a) {
      for (std::size_t b = 0; b < x.grid_lambdas.size(); ++b) {
        run_case("lambda_" + std::to_string(a) + "_" + std::to_string(b), config.mu0(), config.nu0(),
                 config.problem.epsilon, Pair(x.grid_lambdas[a], x.grid_lambdas[b]));
      }
    }
  }
  if (sweep == "all" || sweep == "nominal") {
    for (std::size_t k = 0; k < x.grid_nominals.size(); ++k) {
      run_case("nominal_" + std::to_string(k), DiscreteDistribution(x.grid_nominals[k].first),
               DiscreteDistribution(x.grid_nominals[k].second), config.problem.epsilon, x.grid_fixed_lambda);
    }
  }
  if (sweep == "all" || sweep == "epsilon") {
    for (std::size_t k = 0; k < x.grid_epsilons.size(); ++k) {
      run_case("epsilon_" + std::to_string(k), config.mu0(), config.nu0(), x.grid_epsilons[k], x.grid_fixed_lambda);
    }
  }
  w.table("grid_points",
          {"case", "lambda1", "lambda2", "mu0_1", "nu0_1", "epsilon", "log_normalizer", "expected_p11", "expected_p12",
           "eot_p11", "eot_p12"},
          points);
  w.result.summary = "grid2x2: " + std::to_string(written) + " cases";
  return w.result;
}

CommandResult run_command(const std::string& name, const ExperimentConfig& config, const CommandOptions& options) {
  if (name == "sinkhorn") return cmd_sinkhorn(config, options);
  if (name == "potentials") return cmd_potentials(config, options);
  if (name == "sample") return cmd_sample(config, options);
  if (name == "fairness") return cmd_fairness(config, options);
  if (name == "repair") return cmd_repair(config, options);
  if (name == "grid2x2") return cmd_grid2x2(config, options);
  throw ValidationError("unknown command '" + name + "'");
}

int exit_code_for_current_exception() noexcept {
  try {
    throw;
  } catch (const SamplerHealthError&) {
    return kExitSamplerHealth;
  } catch (const ConvergenceError&) {
    return kExitConvergence;
  } catch (const NonConvergenceError&) {
    return kExitConvergence;
  } catch (const ValidationError&) {
    return kExitValidation;
  } catch (const ParameterError&) {
    return kExitValidation;
  } catch (const DimensionError&) {
    return kExitValidation;
  } catch (const DomainError&) {
    return kExitValidation;
  } catch (const CapacityError&) {
    return kExitValidation;
  } catch (const DegeneracyError&) {
    return kExitValidation;
  } catch (const RadiusTooSmallError&) {
    return kExitValidation;
  } catch (...) {
    return kExitFailure;
  }
}

}  // namespace hfpdot::cli
