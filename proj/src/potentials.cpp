#include "hfpdot/potentials.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace hfpdot {

GradientEstimate dual_gradient_estimate(const Pair& lambda, const KnowledgeConstraints& constraints,
                                        const HmcConfig& sampler_config, std::size_t n_samp) {
  if (n_samp < 100) throw ParameterError("dual_gradient_estimate: n_samp must be at least 100");
  const HyperpriorParams params(constraints, lambda);
  const HmcRun run = hmc_sample(HyperpriorDensity(params).target(), sampler_config, n_samp);

  const std::size_t count = run.samples.size();
  std::vector<double> r1(count);
  std::vector<double> r2(count);
  for (std::size_t s = 0; s < count; ++s) {
    const Pair r = moment_vector(run.samples[s], constraints);
    r1[s] = r[0];
    r2[s] = r[1];
  }
  GradientEstimate out;
  out.diagnostics = run.diagnostics;
  const std::vector<double>* traces[2] = {&r1, &r2};
  for (int c = 0; c < 2; ++c) {
    const auto& trace = *traces[c];
    const double mean = compensated_sum(trace) / static_cast<double>(count);
    double var = 0.0;
    for (double x : trace) var += (x - mean) * (x - mean);
    var /= static_cast<double>(count - 1);
    // ESS over the concatenated chains slightly understates mixing at the
    // chain joins, which only widens the error bar.
    const double ess = std::max(1.0, effective_sample_size(trace));
    out.mean_moment[c] = mean;
    out.standard_error[c] = std::sqrt(var / ess);
  }
  for (std::size_t s = 0; s < count; ++s) {
    const Pair centred(r1[s] - out.mean_moment[0], r2[s] - out.mean_moment[1]);
    out.moment_covariance += centred * centred.transpose();
  }
  out.moment_covariance /= static_cast<double>(count - 1);
  out.gradient = constraints.radii() - out.mean_moment;
  return out;
}

BfgsResult bfgs_update(const Matrix2& inverse_hessian, const Pair& s, const Pair& n) {
  const double curvature = n.dot(s);
  if (std::abs(curvature) < 1e-12 || curvature <= 1e-12 * n.norm() * s.norm()) {
    return {inverse_hessian, true};
  }
  const double r = 1.0 / curvature;
  const Matrix2 left = Matrix2::Identity() - r * s * n.transpose();
  Matrix2 updated = left * inverse_hessian * left.transpose() + r * s * s.transpose();
  updated = 0.5 * (updated + updated.transpose()).eval();
  return {updated, false};
}

StepSize quadratic_step_size(const Pair& d, const Pair& grad_here, const Pair& grad_at_d, double rho_max) {
  if (d.isZero(0.0)) throw ParameterError("quadratic_step_size: zero search direction");
  if (!(rho_max > 0.0)) throw ParameterError("quadratic_step_size: rho_max must be positive");
  const double denominator = d.dot(grad_at_d - grad_here);
  if (!(denominator > 1e-12)) return {1.0, true, false};
  const double rho = -d.dot(grad_here) / denominator;
  if (!(rho > 0.0)) return {1.0, true, false};
  if (rho > rho_max) return {rho_max, false, true};
  return {rho, false, false};
}

double newton_decrement(const Pair& grad, const Matrix2& inverse_hessian) {
  if ((inverse_hessian - inverse_hessian.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw DefinitenessError("newton_decrement: inverse Hessian is not symmetric");
  }
  Eigen::LLT<Matrix2> llt(inverse_hessian);
  if (llt.info() != Eigen::Success) throw DefinitenessError("newton_decrement: inverse Hessian is not positive definite");
  return std::max(0.0, grad.dot(inverse_hessian * grad));
}

void SolverOptions::validate() const {
  if (!(tol > 0.0)) throw ParameterError("SolverOptions: tol must be positive");
  if (n_samp < 100) throw ParameterError("SolverOptions: n_samp must be at least 100");
  if (max_outer < 1) throw ParameterError("SolverOptions: max_outer must be at least 1");
  if (!(initial_lambda.array() >= 0.0).all() || !initial_lambda.allFinite()) {
    throw ParameterError("SolverOptions: initial lambda must be finite and nonnegative");
  }
  if (!(rho_max > 0.0)) throw ParameterError("SolverOptions: rho_max must be positive");
}

namespace {

struct Projected {
  Pair gradient;
  Matrix2 inverse_hessian;
  std::array<bool, 2> pinned;
};

// Components sitting at zero whose gradient pushes them negative are frozen:
// their gradient entry and the matching row/column of H are zeroed.
Projected project(const Pair& lambda, const Pair& gradient, const Matrix2& inverse_hessian) {
  Projected p{gradient, inverse_hessian, {false, false}};
  for (int c = 0; c < 2; ++c) {
    if (lambda[c] <= 0.0 && gradient[c] > 0.0) {
      p.pinned[c] = true;
      p.gradient[c] = 0.0;
      p.inverse_hessian.row(c).setZero();
      p.inverse_hessian.col(c).setZero();
    }
  }
  return p;
}

// Decrement on the free components. The Hessian of the dual objective is the
// covariance of R(pi), estimated from the same draws as the gradient; the
// BFGS matrix only sees curvature along past steps, so it is used only when
// the covariance is degenerate.
double projected_decrement(const Projected& p, const Matrix2& covariance) {
  Pair g = Pair::Zero();
  Matrix2 hessian = Matrix2::Identity();
  Matrix2 h = Matrix2::Identity();
  for (int a = 0; a < 2; ++a) {
    if (p.pinned[a]) continue;
    g[a] = p.gradient[a];
    for (int b = 0; b < 2; ++b) {
      if (p.pinned[b]) continue;
      hessian(a, b) = covariance(a, b);
      h(a, b) = p.inverse_hessian(a, b);
    }
  }
  Eigen::LLT<Matrix2> llt(hessian);
  if (llt.info() == Eigen::Success && hessian.diagonal().minCoeff() > 1e-300) {
    Matrix2 inverse = llt.solve(Matrix2::Identity());
    inverse = 0.5 * (inverse + inverse.transpose()).eval();
    if (inverse.allFinite() && Eigen::LLT<Matrix2>(inverse).info() == Eigen::Success) return newton_decrement(g, inverse);
  }
  return newton_decrement(g, h);
}

HmcConfig seeded(const HmcConfig& base, int iteration, int evaluation) {
  HmcConfig c = base;
  c.seed = splitmix64(base.seed ^ splitmix64(static_cast<std::uint64_t>(iteration) * 4 +
                                             static_cast<std::uint64_t>(evaluation)));
  return c;
}

}  // namespace

SolveResult solve_potentials(const KnowledgeConstraints& constraints, const HmcConfig& sampler_config,
                             const SolverOptions& options) {
  options.validate();
  sampler_config.validate();
  using Clock = std::chrono::steady_clock;

  SolveReport report;
  Pair lambda = options.initial_lambda;
  Matrix2 h = Matrix2::Identity();
  auto started = Clock::now();
  GradientEstimate here = dual_gradient_estimate(lambda, constraints, seeded(sampler_config, 0, 0), options.n_samp);

  for (int t = 1; t <= options.max_outer; ++t) {
    DualState state;
    state.iteration = t;
    state.lambda = lambda;
    state.inverse_hessian = h;
    state.gradient_estimate = here.gradient;
    state.gradient_standard_error = here.standard_error;
    state.mean_moment = here.mean_moment;

    const Projected proj = project(lambda, here.gradient, h);
    state.pinned = proj.pinned;
    state.newton_decrement = projected_decrement(proj, here.moment_covariance);
    const HmcDiagnostics diag_here = here.diagnostics;

    if (state.newton_decrement <= options.tol) {
      report.converged = true;
      report.trajectory.push_back(state);
      report.diagnostics.push_back(diag_here);
      report.wall_seconds.push_back(std::chrono::duration<double>(Clock::now() - started).count());
      break;
    }

    // Tentative full step, projected onto the orthant.
    const Pair raw_direction = -proj.inverse_hessian * proj.gradient;
    const Pair tentative = (lambda + raw_direction).cwiseMax(0.0);
    const Pair direction = tentative - lambda;
    if (direction.isZero(0.0)) {
      report.trajectory.push_back(state);
      report.diagnostics.push_back(diag_here);
      report.wall_seconds.push_back(std::chrono::duration<double>(Clock::now() - started).count());
      report.converged = true;
      break;
    }
    const HmcConfig tentative_config =
        options.common_random_numbers ? seeded(sampler_config, t, 0) : seeded(sampler_config, t, 1);
    const GradientEstimate at_tentative =
        dual_gradient_estimate(tentative, constraints, tentative_config, options.n_samp);
    const StepSize rho = quadratic_step_size(direction, here.gradient, at_tentative.gradient, options.rho_max);
    state.step_size = rho.value;
    state.step_fallback = rho.fallback;

    const Pair next = (lambda + rho.value * direction).cwiseMax(0.0);
    GradientEstimate there = dual_gradient_estimate(next, constraints, seeded(sampler_config, t, 2), options.n_samp);
    const BfgsResult updated = bfgs_update(h, next - lambda, there.gradient - here.gradient);
    state.curvature_skipped = updated.skipped;

    report.trajectory.push_back(state);
    report.diagnostics.push_back(diag_here);
    report.wall_seconds.push_back(std::chrono::duration<double>(Clock::now() - started).count());
    started = Clock::now();

    lambda = next;
    h = updated.inverse_hessian;
    here = std::move(there);
  }

  if (!report.converged) {
    // Record the state the loop stopped at so the trajectory ends on the
    // returned potentials.
    DualState last;
    last.iteration = options.max_outer + 1;
    last.lambda = lambda;
    last.inverse_hessian = h;
    last.gradient_estimate = here.gradient;
    last.gradient_standard_error = here.standard_error;
    last.mean_moment = here.mean_moment;
    const Projected proj = project(lambda, here.gradient, h);
    last.pinned = proj.pinned;
    last.newton_decrement = projected_decrement(proj, here.moment_covariance);
    report.trajectory.push_back(last);
    report.diagnostics.push_back(here.diagnostics);
    report.wall_seconds.push_back(std::chrono::duration<double>(Clock::now() - started).count());
  }
  return {HyperpriorParams(constraints, lambda), std::move(report)};
}

namespace {

nlohmann::json pair_json(const Pair& p) { return nlohmann::json::array({p[0], p[1]}); }

}  // namespace

nlohmann::json to_json(const HmcDiagnostics& diagnostics) {
  nlohmann::json ess = nlohmann::json::array();
  for (Index k = 0; k < diagnostics.effective_sample_size.size(); ++k) ess.push_back(diagnostics.effective_sample_size[k]);
  return {{"acceptance_rate", diagnostics.acceptance_rate},
          {"adapted_step_size", diagnostics.adapted_step_size},
          {"divergences", diagnostics.divergences},
          {"proposals", diagnostics.proposals},
          {"effective_sample_size", ess}};
}

nlohmann::json to_json(const SolveReport& report, bool timing) {
  nlohmann::json trajectory = nlohmann::json::array();
  for (const DualState& s : report.trajectory) {
    trajectory.push_back({{"iteration", s.iteration},
                          {"lambda", pair_json(s.lambda)},
                          {"inverse_hessian",
                           {{s.inverse_hessian(0, 0), s.inverse_hessian(0, 1)},
                            {s.inverse_hessian(1, 0), s.inverse_hessian(1, 1)}}},
                          {"gradient", pair_json(s.gradient_estimate)},
                          {"gradient_se", pair_json(s.gradient_standard_error)},
                          {"mean_moment", pair_json(s.mean_moment)},
                          {"step_size", s.step_size},
                          {"newton_decrement", s.newton_decrement},
                          {"step_fallback", s.step_fallback},
                          {"curvature_skipped", s.curvature_skipped},
                          {"pinned", {s.pinned[0], s.pinned[1]}}});
  }
  nlohmann::json diagnostics = nlohmann::json::array();
  for (const auto& d : report.diagnostics) diagnostics.push_back(to_json(d));
  nlohmann::json out = {{"converged", report.converged}, {"trajectory", trajectory}, {"diagnostics", diagnostics}};
  if (!report.trajectory.empty()) out["lambda"] = pair_json(report.trajectory.back().lambda);
  if (timing) out["wall_seconds"] = report.wall_seconds;
  return out;
}

}  // namespace hfpdot
