#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "hfpdot/hyperprior.hpp"
#include "hfpdot/sampler.hpp"

namespace hfpdot {

using Matrix2 = Eigen::Matrix2d;

struct GradientEstimate {
  /// theta - mean R(pi).
  Pair gradient;
  /// Monte-Carlo standard error of each component (ESS-corrected).
  Pair standard_error;
  Pair mean_moment;
  /// Sample covariance of R(pi), the Hessian of the dual objective.
  Matrix2 moment_covariance = Matrix2::Zero();
  HmcDiagnostics diagnostics;
};

/// Dual gradient at lambda from n_samp hyperprior draws.
GradientEstimate dual_gradient_estimate(const Pair& lambda, const KnowledgeConstraints& constraints,
                                        const HmcConfig& sampler_config, std::size_t n_samp);

struct BfgsResult {
  Matrix2 inverse_hessian;
  bool skipped = false;
};

/// Inverse-Hessian update (I - r s n^T) H (I - r n s^T) + r s s^T, r = 1/(n^T s).
/// Curvature pairs with |n^T s| < 1e-12 or n^T s <= 1e-12 |n||s| leave H
/// unchanged and set `skipped`.
BfgsResult bfgs_update(const Matrix2& inverse_hessian, const Pair& s, const Pair& n);

struct StepSize {
  double value = 1.0;
  bool fallback = false;
  bool clamped = false;
};

/// rho = -d^T g / (d^T (g(lambda + d) - g)), clamped to (0, rho_max];
/// a denominator <= 1e-12 yields rho = 1 with `fallback` set.
StepSize quadratic_step_size(const Pair& d, const Pair& grad_here, const Pair& grad_at_d, double rho_max = 1.0);

/// g^T H g; throws DefinitenessError unless H is symmetric positive definite.
double newton_decrement(const Pair& grad, const Matrix2& inverse_hessian);

struct SolverOptions {
  double tol = 1e-3;
  std::size_t n_samp = 2000;
  int max_outer = 50;
  bool common_random_numbers = false;
  Pair initial_lambda = Pair(1.0, 1.0);
  double rho_max = 1.0;

  void validate() const;
};

struct DualState {
  int iteration = 0;
  Pair lambda = Pair::Zero();
  Matrix2 inverse_hessian = Matrix2::Identity();
  Pair gradient_estimate = Pair::Zero();
  Pair gradient_standard_error = Pair::Zero();
  Pair mean_moment = Pair::Zero();
  double step_size = 0.0;
  double newton_decrement = 0.0;
  bool step_fallback = false;
  bool curvature_skipped = false;
  /// Components held at zero by the nonnegativity projection.
  std::array<bool, 2> pinned{false, false};
};

struct SolveReport {
  std::vector<DualState> trajectory;
  std::vector<HmcDiagnostics> diagnostics;
  std::vector<double> wall_seconds;
  bool converged = false;
};

struct SolveResult {
  HyperpriorParams params;
  SolveReport report;
};

/// Stochastic quasi-Newton minimisation of lambda^T theta + log N(lambda)
/// over lambda >= 0. Non-convergence is reported, not thrown.
SolveResult solve_potentials(const KnowledgeConstraints& constraints, const HmcConfig& sampler_config,
                             const SolverOptions& options);

nlohmann::json to_json(const HmcDiagnostics& diagnostics);
/// Wall-clock times are included only when `timing` is set, so that
/// identical runs serialize identically.
nlohmann::json to_json(const SolveReport& report, bool timing = false);

}  // namespace hfpdot
