#include <chrono>
#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hfpdot/cli.hpp"
#include "oracles.hpp"

using namespace hfpdot;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int criterion, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
  char buffer[1024];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buffer, sizeof buffer, format, args);
  va_end(args);
  return buffer;
}

Vector random_simplex(Index q, std::mt19937_64& gen) {
  std::gamma_distribution<double> gamma(1.0);
  Vector w(q);
  for (Index k = 0; k < q; ++k) w[k] = gamma(gen) + 1e-2;
  return w / w.sum();
}

KnowledgeConstraints two_by_two(double eta, double zeta) {
  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  Vector mu0(2);
  mu0 << 0.2, 0.8;
  Vector nu0(2);
  nu0 << 0.9, 0.1;
  return KnowledgeConstraints(DiscreteDistribution(mu0), DiscreteDistribution(nu0), eta, zeta, Pair(0, 0),
                              gibbs_kernel(CostMatrix(c), 1.0));
}

KnowledgeConstraints five_by_five(double eta, double zeta) {
  return KnowledgeConstraints(DiscreteDistribution::uniform(5), DiscreteDistribution::uniform(5), eta, zeta,
                              Pair(0.5, 0.5), gibbs_kernel(CostMatrix::squared_euclidean_grid(5, 5), 0.5));
}

HmcConfig sampler(std::uint64_t seed, int burn_in = 2000) {
  HmcConfig c;
  c.burn_in = burn_in;
  c.adaptation_steps = burn_in * 4 / 5;
  c.seed = seed;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

cli::ExperimentConfig setting_config(const fs::path& out) {
  cli::ExperimentConfig c = cli::ExperimentConfig::load(fs::path(HFPDOT_CONFIG_DIR) / "setting_20x20.json");
  c.output.directory = out.string();
  c.output.formats = {"json"};
  return c;
}

void criterion1() {
  const auto start = Clock::now();
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_gap = 0.0;
  double worst_ratio = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const DiscreteDistribution mu(random_simplex(5, gen));
    const DiscreteDistribution nu(random_simplex(5, gen));
    Matrix c(5, 5);
    for (Index k = 0; k < c.size(); ++k) c.data()[k] = u(gen);
    const CostMatrix cost(c);
    const EotSolution s = sinkhorn(mu, nu, gibbs_kernel(cost, 1e-3 * cost.max()));
    const double gap = std::max((s.plan.row_sums() - mu.weights()).cwiseAbs().maxCoeff(),
                                (s.plan.col_sums() - nu.weights()).cwiseAbs().maxCoeff());
    const double lp = transport_cost(cost, exact_ot_small(mu, nu, cost));
    worst_gap = std::max(worst_gap, gap);
    worst_ratio = std::max(worst_ratio, transport_cost(cost, s.plan) / lp);
  }
  const double elapsed = seconds_since(start);
  verdict(1, worst_gap < 1e-9 && worst_ratio <= 1.01 && elapsed < 10.0,
          fmt("max marginal gap %.3g (< 1e-9), max cost / LP %.6f (<= 1.01), %.2f s (< 10 s)", worst_gap, worst_ratio,
              elapsed));
}

void criterion2() {
  const auto start = Clock::now();
  std::mt19937_64 gen(202);
  std::gamma_distribution<double> gamma(2.0);
  Vector a(4);
  Vector b(5);
  for (Index k = 0; k < 4; ++k) a[k] = gamma(gen);
  for (Index k = 0; k < 5; ++k) b[k] = gamma(gen);
  const KnowledgeConstraints k(DiscreteDistribution::normalized(a), DiscreteDistribution::normalized(b), 1.0, 1.0,
                               Pair(0.5, 0.5), gibbs_kernel(CostMatrix::squared_euclidean_grid(4, 5), 2.0));
  const HyperpriorParams params(k, Pair(1.5, 0.25));
  const SimplexChart chart(20);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::gamma_distribution<double> g1(1.0);
    Matrix raw(4, 5);
    for (Index e = 0; e < raw.size(); ++e) raw.data()[e] = g1(gen) + 1e-3;
    const TransportPlan plan(raw / raw.sum());
    const Vector z = chart.to_unconstrained(plan.flat());
    const Matrix g = grad_log_density(plan, params);
    const Vector analytic = chart.pullback(plan.flat(), Eigen::Map<const Vector>(g.data(), g.size())) +
                            chart.log_jacobian_gradient(plan.flat());
    const Vector fd = oracle::central_difference(
        [&](const Vector& x) {
          return log_density(TransportPlan::from_flat(chart.to_simplex(x), 4, 5), params) + chart.log_jacobian(x);
        },
        z, 1e-6);
    worst = std::max(worst, (analytic - fd).norm() / fd.norm());
  }
  const double elapsed = seconds_since(start);
  verdict(2, worst < 1e-5 && elapsed < 5.0,
          fmt("max relative error %.3g (< 1e-5) over 20 plans, %.2f s (< 5 s)", worst, elapsed));
}

void criterion3() {
  const auto start = Clock::now();
  const oracle::Dual2x2 dual(oracle::Instance2x2{});
  // Gradient of lambda^T theta + log N(lambda), i.e. theta - E[R].
  const auto fd = [&](double h, int c) {
    std::array<double, 2> up{1.0, 1.0};
    std::array<double, 2> down{1.0, 1.0};
    up[static_cast<std::size_t>(c)] += h;
    down[static_cast<std::size_t>(c)] -= h;
    return (dual.dual(down) - dual.dual(up)) / (2.0 * h);
  };
  HmcConfig config = sampler(303);
  config.chains = 4;
  const GradientEstimate est = dual_gradient_estimate(Pair(1, 1), two_by_two(0.05, 0.05), config, 20000);
  bool pass = true;
  std::string detail;
  for (int c = 0; c < 2; ++c) {
    const double reference = fd(1e-4, c);
    const double truncation = std::abs(reference - fd(2e-4, c));
    const double combined = std::hypot(est.standard_error[c], truncation);
    const double z = std::abs(est.gradient[c] - reference) / combined;
    pass = pass && z < 3.0;
    detail += fmt("component %d: hmc %.6f, quadrature %.6f, |diff| / se %.2f; ", c + 1, est.gradient[c], reference, z);
  }
  const double elapsed = seconds_since(start);
  pass = pass && elapsed < 120.0;
  verdict(3, pass, detail + fmt("%.1f s (< 120 s)", elapsed));
}

struct TightCheck {
  bool pass;
  std::string detail;
};

TightCheck tight_radius(const std::string& name, const KnowledgeConstraints& k, std::uint64_t seed) {
  SolverOptions o;
  o.n_samp = 20000;
  o.max_outer = 100;
  HmcConfig config = sampler(seed);
  config.chains = 4;
  const SolveResult r = solve_potentials(k, config, o);
  const DualState& last = r.report.trajectory.back();
  const Pair lambda = r.params.potentials;
  const bool above = lambda.minCoeff() > 10.0;
  const bool feasible = (last.mean_moment.array() <= k.radii().array() + 3.0 * last.gradient_standard_error.array()).all();
  const HmcRun run = hmc_sample(HyperpriorDensity(r.params).target(), sampler(seed + 1), 4000);
  const auto [mu, nu] = marginals(expected_plan(run.samples));
  const double kl_mu = kl_divergence(mu, k.mu0);
  const double kl_nu = kl_divergence(nu, k.nu0);
  const bool close = kl_mu < 0.05 && kl_nu < 0.05;
  return {above && feasible && close,
          fmt("%s tight: lambda (%.3g, %.3g) %s, E[R] (%.4g, %.4g) vs theta + 3 se (%.4g, %.4g), expected-plan KL "
              "(%.2g, %.2g); ",
              name.c_str(), lambda[0], lambda[1], r.report.converged ? "converged" : "not converged",
              last.mean_moment[0], last.mean_moment[1], k.eta + 3 * last.gradient_standard_error[0],
              k.zeta + 3 * last.gradient_standard_error[1], kl_mu, kl_nu)};
}

TightCheck loose_radius(const std::string& name, const KnowledgeConstraints& k, std::uint64_t seed) {
  SolverOptions o;
  o.n_samp = 2000;
  const SolveResult r = solve_potentials(k, sampler(seed), o);
  const double top = r.params.potentials.cwiseAbs().maxCoeff();
  return {top < 0.1, fmt("%s loose: max lambda %.3g; ", name.c_str(), top)};
}

void criterion4() {
  const auto start = Clock::now();
  const std::vector<TightCheck> checks{loose_radius("2x2", two_by_two(10, 10), 401),
                                       loose_radius("5x5", five_by_five(10, 10), 402),
                                       tight_radius("2x2", two_by_two(0.01, 0.01), 403),
                                       tight_radius("5x5", five_by_five(0.01, 0.01), 404)};
  bool pass = true;
  std::string detail;
  for (const auto& c : checks) {
    pass = pass && c.pass;
    detail += c.detail;
  }
  const double elapsed = seconds_since(start);
  verdict(4, pass && elapsed < 600.0, detail + fmt("%.1f s (< 600 s)", elapsed));
}

void criterion5() {
  const auto start = Clock::now();
  const oracle::Dual2x2 dual(oracle::Instance2x2{}, 40);
  const auto best = dual.maximize(50.0, 26, 10);
  SolverOptions o;
  o.n_samp = 20000;
  o.max_outer = 100;
  HmcConfig config = sampler(505);
  config.chains = 4;
  const SolveResult r = solve_potentials(two_by_two(0.05, 0.05), config, o);
  bool pass = r.report.converged;
  for (int c = 0; c < 2; ++c) {
    const double reference = best[static_cast<std::size_t>(c)];
    const double allowed = std::max(0.05 * std::abs(reference), 0.05);
    pass = pass && std::abs(r.params.potentials[c] - reference) <= allowed;
  }
  const double elapsed = seconds_since(start);
  pass = pass && elapsed < 900.0;
  verdict(5, pass,
          fmt("solver (%.4f, %.4f) %s vs grid-search maximizer (%.4f, %.4f), tolerance 5%%, %.1f s (< 900 s)",
              r.params.potentials[0], r.params.potentials[1], r.report.converged ? "converged" : "not converged",
              best[0], best[1], elapsed));
}

void criterion6() {
  const auto start = Clock::now();
  const Grid2x2 grid = Grid2x2::uniform(50);
  double worst = 0.0;
  std::vector<HyperpriorParams> cases;
  for (double l : {0.05, 10.0, 100.0}) cases.emplace_back(two_by_two(0.05, 0.05), Pair(l, l));
  for (double eps : {0.1, 0.5, 10.0}) {
    KnowledgeConstraints k = two_by_two(0.05, 0.05);
    Matrix c(2, 2);
    c << 0, 1, 1, 0;
    k.ideal = gibbs_kernel(CostMatrix(c), eps);
    cases.emplace_back(k, Pair(1.0, 1.0));
  }
  for (const auto& params : cases) {
    const Matrix low = marginal_density_grid_2x2(params, grid, QuadratureSpec(64));
    const Matrix high = marginal_density_grid_2x2(params, grid, QuadratureSpec(128));
    worst = std::max(worst, (low - high).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(start);
  verdict(6, worst < 1e-8 && elapsed < 60.0,
          fmt("max |order 64 - order 128| %.3g (< 1e-8) over the lambda and epsilon sweeps, %.2f s (< 60 s)", worst,
              elapsed));
}

void criterion7() {
  const auto start = Clock::now();
  std::string detail;
  bool pass = true;

  PlanLogDensity flat;
  flat.rows = 2;
  flat.cols = 2;
  flat.evaluate = [](const Eigen::Ref<const Vector>&, Eigen::Ref<Vector> gradient) {
    gradient.setZero();
    return 0.0;
  };
  const HmcRun dirichlet = hmc_sample(flat, sampler(701), 8000);
  double worst_z = 0.0;
  for (Index k = 0; k < 4; ++k) {
    std::vector<double> xs;
    for (const auto& s : dirichlet.samples) xs.push_back(s.flat()[k]);
    const double mean = compensated_sum(xs) / static_cast<double>(xs.size());
    const double se = std::sqrt(sample_variance(xs) / dirichlet.diagnostics.effective_sample_size[k]);
    worst_z = std::max(worst_z, std::abs(mean - 0.25) / se);
  }
  pass = pass && worst_z < 3.0;
  detail += fmt("dirichlet max |mean - 1/4| / se %.2f; ", worst_z);

  HmcConfig two = sampler(702);
  two.chains = 4;
  const std::size_t n = 20000;
  const HmcRun run = hmc_sample(HyperpriorDensity(HyperpriorParams(two_by_two(0.05, 0.05), Pair(1, 1))).target(), two, n);
  const oracle::Instance2x2 inst;
  const auto rule = oracle::golub_welsch(40);
  std::array<double, 10> probability{};
  double total = 0.0;
  for (int bin = 0; bin < 10; ++bin) {
    probability[static_cast<std::size_t>(bin)] = oracle::integrate(
        rule,
        [&](double p11) {
          return oracle::integrate(
              rule,
              [&](double p12) {
                const double rest = 1.0 - p11 - p12;
                return oracle::integrate(
                    rule, [&](double p21) { return std::exp(inst.log_density({p11, p12, p21, rest - p21}, {1.0, 1.0})); },
                    0.0, rest);
              },
              0.0, 1.0 - p11);
        },
        bin / 10.0, bin / 10.0 + 0.1);
    total += probability[static_cast<std::size_t>(bin)];
  }
  std::vector<double> indicator(n);
  double worst_bin = 0.0;
  for (int bin = 0; bin < 10; ++bin) {
    for (std::size_t s = 0; s < n; ++s) {
      const double p11 = run.samples[s](0, 0);
      indicator[s] = (p11 >= bin / 10.0 && p11 < bin / 10.0 + 0.1) ? 1.0 : 0.0;
    }
    const double expected = probability[static_cast<std::size_t>(bin)] / total;
    const double observed = compensated_sum(indicator) / static_cast<double>(n);
    const double ess = std::max(1.0, effective_sample_size(indicator));
    const double se = std::sqrt(expected * (1.0 - expected) / ess);
    worst_bin = std::max(worst_bin, std::abs(observed - expected) / se);
  }
  pass = pass && worst_bin < 3.0;
  detail += fmt("2x2 histogram max |bin - quadrature| / se %.2f; ", worst_bin);

  const cli::ExperimentConfig setting_doc = setting_config(fs::temp_directory_path());
  HmcConfig setting = setting_doc.sampler;
  setting.seed = 703;
  const HmcRun big = hmc_sample(HyperpriorDensity(HyperpriorParams(setting_doc.constraints(), Pair(0.05, 0.05))).target(),
                                setting, 1000);
  const double rate = big.diagnostics.acceptance_rate;
  pass = pass && rate >= 0.45 && rate <= 0.75;
  detail += fmt("20x20 acceptance %.3f in [0.45, 0.75]; ", rate);

  const double elapsed = seconds_since(start);
  pass = pass && elapsed < 300.0;
  verdict(7, pass, detail + fmt("%.1f s (< 300 s)", elapsed));
}

void criterion8(const fs::path& root) {
  const auto start = Clock::now();
  cli::ExperimentConfig c = setting_config(root / "frequency");
  c.experiment.lambda = Pair(0.05, 0.05);
  c.experiment.frequency_sizes = {100};
  cli::CommandOptions options;
  options.subexperiment = "frequency";
  cli::cmd_fairness(c, options);
  const auto rows = load_json(root / "frequency" / "frequency_N100.json")["rows"].get<std::vector<std::vector<double>>>();
  double sum = 0.0;
  std::size_t count = 0;
  std::size_t within = 0;
  for (const auto& row : rows) {
    for (double p : row) {
      sum += p;
      ++count;
      const double se = std::sqrt(p * (1.0 - p) / 100.0);
      if (se > 0.0 ? std::abs(p - 0.5) / se < 4.0 : p == 0.5) ++within;
    }
  }
  const double mean = sum / static_cast<double>(count);
  const double fraction = static_cast<double>(within) / static_cast<double>(count);
  const double elapsed = seconds_since(start);
  verdict(8, mean >= 0.45 && mean <= 0.55 && fraction >= 0.95 && elapsed < 900.0,
          fmt("mean frequency %.4f in [0.45, 0.55], fraction of entries within 4 se of 1/2 %.3f (>= 0.95), %.1f s "
              "(< 900 s)",
              mean, fraction, elapsed));
}

void criterion9(const fs::path& root) {
  const auto start = Clock::now();
  cli::ExperimentConfig c = setting_config(root / "diversity");
  c.experiment.diversity_lambdas = {0.05, 1.0, 10.0, 100.0};
  c.experiment.runs = 20;
  cli::CommandOptions options;
  options.subexperiment = "diversity";
  cli::cmd_fairness(c, options);
  const auto trend = load_json(root / "diversity" / "diversity_trend.json");
  const double rho = trend["spearman_rho"].get<double>();
  const double p = trend["spearman_p"].get<double>();
  const bool bounded = trend["within_bounds"].get<bool>();
  const double elapsed = seconds_since(start);
  verdict(9, rho < 0.0 && p < 0.01 && bounded && elapsed < 1200.0,
          fmt("spearman rho %.4f (< 0), p %.3g (< 0.01), index within [1, mn]: %s, %.1f s (< 1200 s)", rho, p,
              bounded ? "yes" : "no", elapsed));
}

void criterion10(const fs::path& root) {
  const auto start = Clock::now();
  cli::ExperimentConfig c = setting_config(root / "repair");
  c.experiment.pairs = 50;
  c.experiment.scheme_count = 50;
  cli::cmd_repair(c, {});
  const auto rows = load_json(root / "repair" / "repair.json")["rows"];
  bool nonnegative = true;
  for (const auto& row : rows) nonnegative = nonnegative && row[2].get<double>() >= 0.0 && row[3].get<double>() >= 0.0;
  const auto summary = load_json(root / "repair" / "repair_summary.json")["schemes"];
  const auto& eot = summary["deterministic_eot"];
  const auto& randomized = summary["randomized_hfpd"];
  const auto& nominal = summary["nominal_ot"];
  const double eot_var = eot["icd_variance"].get<double>();
  const double nominal_var = nominal["icd_variance"].get<double>();
  const double eot_distortion = eot["distortion_mean"].get<double>();
  const double hfpd_distortion = randomized["distortion_mean"].get<double>();
  const double ratio = hfpd_distortion / eot_distortion;
  const double elapsed = seconds_since(start);
  verdict(10,
          nonnegative && nominal_var < eot_var && std::abs(ratio - 1.0) <= 0.25 && elapsed < 1200.0,
          fmt("nonnegative: %s; icd variance nominal %.4g < eot %.4g; distortion mean randomized %.4g vs eot %.4g "
              "(ratio %.3f, allowed within 25%%); metric: icd variance randomized %.4g vs eot %.4g; %.1f s (< 1200 s)",
              nonnegative ? "yes" : "no", nominal_var, eot_var, hfpd_distortion, eot_distortion, ratio,
              randomized["icd_variance"].get<double>(), eot_var, elapsed));
}

void criterion11(const fs::path& root) {
  const auto start = Clock::now();
  struct Run {
    std::string command;
    std::string sub;
    std::string format;
  };
  const std::vector<Run> runs{{"sinkhorn", "", ""},
                              {"potentials", "", ""},
                              {"sample", "", ""},
                              {"sample", "", "bin"},
                              {"fairness", "frequency", ""},
                              {"fairness", "diversity", ""},
                              {"fairness", "markov", ""},
                              {"repair", "", ""},
                              {"grid2x2", "all", ""}};
  bool pass = true;
  std::size_t compared = 0;
  std::string mismatch;
  for (const auto& r : runs) {
    std::vector<std::vector<fs::path>> files;
    for (const char* side : {"a", "b"}) {
      cli::ExperimentConfig c = cli::ExperimentConfig::load(fs::path(HFPDOT_CONFIG_DIR) / "two_by_two.json");
      c.output.directory = (root / "determinism" / side / (r.command + r.sub + r.format)).string();
      c.solver.n_samp = 500;
      c.experiment.runs = 3;
      c.experiment.markov_runs = 5;
      c.experiment.pairs = 5;
      c.experiment.scheme_count = 5;
      c.experiment.n_samples = 50;
      c.experiment.grid_points = 10;
      c.experiment.quadrature_order = 16;
      cli::CommandOptions options;
      options.subexperiment = r.sub;
      if (!r.format.empty()) options.format = r.format;
      try {
        files.push_back(cli::run_command(r.command, c, options).files);
      } catch (const cli::NonConvergenceError&) {
        files.push_back({fs::path(c.output.directory) / "potentials.json"});
      }
    }
    if (files[0].size() != files[1].size()) {
      pass = false;
      mismatch += r.command + " file count; ";
      continue;
    }
    for (std::size_t k = 0; k < files[0].size(); ++k) {
      ++compared;
      if (slurp(files[0][k]) != slurp(files[1][k])) {
        pass = false;
        mismatch += files[0][k].filename().string() + "; ";
      }
    }
  }
  const double elapsed = seconds_since(start);
  verdict(11, pass && compared > 0,
          fmt("%zu files compared across %zu command runs, %s, %.1f s", compared, runs.size(),
              mismatch.empty() ? "all byte-identical" : ("mismatches: " + mismatch).c_str(), elapsed));
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int a = 1; a < argc; ++a) selected.push_back(std::atoi(argv[a]));
  const auto wanted = [&](int c) { return selected.empty() || std::find(selected.begin(), selected.end(), c) != selected.end(); };

  const fs::path root = fs::temp_directory_path() / "hfpdot_acceptance";
  fs::remove_all(root);
  const std::vector<std::function<void()>> criteria{
      criterion1, criterion2, criterion3, criterion4, criterion5, criterion6, criterion7,
      [&] { criterion8(root); }, [&] { criterion9(root); }, [&] { criterion10(root); }, [&] { criterion11(root); }};
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int number = static_cast<int>(k + 1);
    if (!wanted(number)) continue;
    try {
      criteria[k]();
    } catch (const std::exception& e) {
      verdict(number, false, std::string("threw: ") + e.what());
    }
  }
  return failures == 0 ? 0 : 1;
}
