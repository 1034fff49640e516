#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "hfpdot/core.hpp"
#include "hfpdot/eot.hpp"
#include "hfpdot/target.hpp"

namespace hfpdot {

using Pair = Eigen::Vector2d;

/// The knowledge set K: nominal marginals, KL radii theta = (eta, zeta),
/// the conjugate hierarchical ideal's lambda_I and the base ideal pi_I.
/// `alpha`, when set, multiplies an extra exp(-alpha KL(pi || pi_I)) into
/// the hierarchical ideal (annealed Gibbs ideal).
struct KnowledgeConstraints {
  KnowledgeConstraints(DiscreteDistribution mu0, DiscreteDistribution nu0, double eta, double zeta, Pair lambda_ideal,
                       IdealDesign ideal, std::optional<double> alpha = std::nullopt);

  Index rows() const noexcept { return mu0.size(); }
  Index cols() const noexcept { return nu0.size(); }
  Pair radii() const { return {eta, zeta}; }

  DiscreteDistribution mu0;
  DiscreteDistribution nu0;
  double eta;
  double zeta;
  Pair lambda_ideal;
  IdealDesign ideal;
  std::optional<double> alpha;
};

/// Constraints paired with Kantorovitch potentials lambda >= 0.
struct HyperpriorParams {
  HyperpriorParams(KnowledgeConstraints constraints, Pair potentials);

  KnowledgeConstraints constraints;
  Pair potentials;
};

/// Gauss-Legendre order per axis for the 2x2 studies.
struct QuadratureSpec {
  explicit QuadratureSpec(std::size_t order = 64);
  std::size_t order;
};

/// Evaluates
///   log S(pi) = -(lambda_I1 + lambda_1) KL(mu || mu0)
///               -(lambda_I2 + lambda_2) KL(nu || nu0)
///               -(1 + alpha) KL(pi || pi_I)
/// with mu, nu the marginals of pi. Every term vanishes at a plan equal to
/// pi_I whose marginals are (mu0, nu0), which fixes the additive constant.
class HyperpriorDensity {
 public:
  HyperpriorDensity(const KnowledgeConstraints& constraints, const Pair& potentials);
  explicit HyperpriorDensity(const HyperpriorParams& params)
      : HyperpriorDensity(params.constraints, params.potentials) {}

  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }

  /// Log-density of a row-major flattened plan. Zero entries follow the
  /// 0 log 0 = 0 convention.
  double log_density(const Eigen::Ref<const Vector>& flat_plan) const;
  /// Log-density and coordinate gradient; throws DomainError unless every
  /// entry is strictly positive.
  double evaluate(const Eigen::Ref<const Vector>& flat_plan, Eigen::Ref<Vector> gradient) const;

  /// Adapter for the sampler; keeps a copy of this density alive.
  PlanLogDensity target() const;

 private:
  Index rows_;
  Index cols_;
  Vector log_mu0_;
  Vector log_nu0_;
  Vector log_ideal_;
  double mu_weight_;
  double nu_weight_;
  double plan_weight_;
};

/// log S~(pi | K) = log S_I(pi) - KL(pi || pi_I) (zero potentials).
double log_density_tilde(const TransportPlan& plan, const KnowledgeConstraints& constraints);
/// Unnormalized log S°(pi | K) for the given potentials.
double log_density(const TransportPlan& plan, const HyperpriorParams& params);
/// Coordinate gradient of log_density w.r.t. each entry (before any chart).
Matrix grad_log_density(const TransportPlan& plan, const HyperpriorParams& params);

/// R(pi) = (KL(mu || mu0), KL(nu || nu0)).
Pair moment_vector(const TransportPlan& plan, const KnowledgeConstraints& constraints);

/// Entrywise mean of the samples.
TransportPlan expected_plan(std::span<const TransportPlan> samples);

/// Lattice over the (pi_11, pi_12) triangle of a 2x2 plan.
struct Grid2x2 {
  Vector p11;
  Vector p12;

  static Grid2x2 uniform(std::size_t points_per_axis);
};

/// Unnormalized marginal density of (pi_11, pi_12), integrating pi_21
/// over (0, 1 - pi_11 - pi_12) with pi_22 dependent. Entry (a, b)
/// corresponds to (grid.p11[a], grid.p12[b]); points outside the open
/// triangle get density zero.
Matrix marginal_density_grid_2x2(const HyperpriorParams& params, const Grid2x2& grid, const QuadratureSpec& quad);

/// log of the integral of the unnormalized 2x2 density over the simplex
/// (Lebesgue on pi_11, pi_12, pi_21).
double log_normalizer_2x2(const HyperpriorParams& params, const QuadratureSpec& quad);

/// Mean plan under the normalized 2x2 density, by the same quadrature.
TransportPlan expected_plan_2x2(const HyperpriorParams& params, const QuadratureSpec& quad);

/// Unnormalized log full conditional of pi_kl with every other entry held
/// fixed except the dependent (m, n) entry, which absorbs the slack.
class ConditionalSlice {
 public:
  ConditionalSlice(const TransportPlan& plan, Index k, Index l, const HyperpriorParams& params);

  /// Right end 1 - c_kl of the support (0, 1 - c_kl).
  double upper() const noexcept { return upper_; }
  /// Log-density at pi_kl = value; -infinity outside the open support.
  double operator()(double value) const;

 private:
  HyperpriorDensity density_;
  Vector base_;
  Index slot_;
  double upper_;
};

ConditionalSlice conditional_slice_log_density(const TransportPlan& plan, Index k, Index l,
                                               const HyperpriorParams& params);

}  // namespace hfpdot
