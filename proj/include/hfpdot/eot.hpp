#pragma once

#include <optional>

#include "hfpdot/core.hpp"

namespace hfpdot {

/// Base ideal design pi_I ∝ exp(-C / epsilon) * phi.
///
/// `log_plan` is authoritative: for small epsilon the exponentiated `plan`
/// underflows to zero away from the cheapest entries, while the log stays
/// finite and is what the densities and solvers consume.
struct IdealDesign {
  TransportPlan plan;
  Matrix log_plan;
  double epsilon;
  TransportPlan phi;
};

struct EotSolution {
  TransportPlan plan;
  long iterations = 0;
  /// Max-norm deviation of the plan marginals from the targets.
  double marginal_error = 0.0;
};

struct SinkhornOptions {
  double tol = 1e-9;
  /// Per annealing stage.
  long max_iter = 10000;
  /// Anneal from a hotter kernel when the ideal spans more than
  /// kSinkhornScalingSpread nats.
  bool epsilon_scaling = true;
};

inline constexpr double kSinkhornScalingSpread = 50.0;

/// Extended Gibbs kernel. `phi` defaults to the uniform plan and must be
/// strictly positive.
IdealDesign gibbs_kernel(const CostMatrix& cost, double epsilon, const std::optional<TransportPlan>& phi = std::nullopt);

/// Log-domain Sinkhorn-Knopp projection of the ideal onto Pi(mu0, nu0),
/// i.e. the KL projection argmin_{pi in Pi(mu0, nu0)} KL(pi || pi_I).
/// Throws ConvergenceError (carrying the last marginal error) when
/// `max_iter` is exhausted.
EotSolution sinkhorn(const DiscreteDistribution& mu0, const DiscreteDistribution& nu0, const IdealDesign& ideal,
                     const SinkhornOptions& options = {});

/// Largest m * n accepted by exact_ot_small.
inline constexpr Index kExactOtMaxEntries = 400;

/// Exact (unregularized) optimal plan via a dense two-phase simplex LP.
TransportPlan exact_ot_small(const DiscreteDistribution& mu0, const DiscreteDistribution& nu0, const CostMatrix& cost);

/// Squared 2-Wasserstein distance between two weighted 1D point sets,
/// computed exactly through the quantile coupling. Supports need not be
/// sorted.
double wasserstein2_1d(const DiscreteDistribution& mu, const DiscreteDistribution& nu, const Vector& support_x,
                       const Vector& support_y);

/// Same as above with raw nonnegative weights summing to one.
double wasserstein2_1d(const Vector& mu, const Vector& nu, const Vector& support_x, const Vector& support_y);

}  // namespace hfpdot
