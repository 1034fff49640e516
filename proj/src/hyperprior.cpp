#include "hfpdot/hyperprior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hfpdot/quadrature.hpp"

namespace hfpdot {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double xlogx_minus(double p, double log_q) { return p > 0.0 ? p * (std::log(p) - log_q) : 0.0; }

void check_plan_shape(const TransportPlan& plan, Index rows, Index cols, const char* where) {
  if (plan.rows() != rows || plan.cols() != cols) {
    throw DimensionError(std::string(where) + ": plan is " + std::to_string(plan.rows()) + "x" +
                         std::to_string(plan.cols()) + ", constraints are " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

}  // namespace

KnowledgeConstraints::KnowledgeConstraints(DiscreteDistribution mu0_, DiscreteDistribution nu0_, double eta_,
                                           double zeta_, Pair lambda_ideal_, IdealDesign ideal_,
                                           std::optional<double> alpha_)
    : mu0(std::move(mu0_)),
      nu0(std::move(nu0_)),
      eta(eta_),
      zeta(zeta_),
      lambda_ideal(std::move(lambda_ideal_)),
      ideal(std::move(ideal_)),
      alpha(alpha_) {
  if (ideal.plan.rows() != mu0.size() || ideal.plan.cols() != nu0.size()) {
    throw DimensionError("KnowledgeConstraints: ideal plan shape does not match (mu0, nu0)");
  }
  if (!(eta >= 0.0) || !(zeta >= 0.0)) throw ParameterError("KnowledgeConstraints: radii must be nonnegative");
  if (!(lambda_ideal.array() >= 0.0).all() || !lambda_ideal.allFinite()) {
    throw ParameterError("KnowledgeConstraints: lambda_ideal must be finite and nonnegative");
  }
  if (!(mu0.weights().array() > 0.0).all() || !(nu0.weights().array() > 0.0).all()) {
    throw DomainError("KnowledgeConstraints: nominal marginals must be strictly positive");
  }
  if (alpha && !(*alpha > 0.0 && std::isfinite(*alpha))) {
    throw ParameterError("KnowledgeConstraints: alpha must be positive");
  }
}

HyperpriorParams::HyperpriorParams(KnowledgeConstraints constraints_, Pair potentials_)
    : constraints(std::move(constraints_)), potentials(std::move(potentials_)) {
  if (!(potentials.array() >= 0.0).all() || !potentials.allFinite()) {
    throw ParameterError("HyperpriorParams: potentials must be finite and nonnegative");
  }
}

QuadratureSpec::QuadratureSpec(std::size_t order_) : order(order_) {
  if (order < 8) throw ParameterError("QuadratureSpec: order must be at least 8");
}

HyperpriorDensity::HyperpriorDensity(const KnowledgeConstraints& constraints, const Pair& potentials)
    : rows_(constraints.rows()),
      cols_(constraints.cols()),
      log_mu0_(constraints.mu0.weights().array().log()),
      log_nu0_(constraints.nu0.weights().array().log()),
      log_ideal_(Eigen::Map<const Vector>(constraints.ideal.log_plan.data(), constraints.ideal.log_plan.size())),
      mu_weight_(constraints.lambda_ideal[0] + potentials[0]),
      nu_weight_(constraints.lambda_ideal[1] + potentials[1]),
      plan_weight_(1.0 + constraints.alpha.value_or(0.0)) {
  if (!(potentials.array() >= 0.0).all()) throw ParameterError("HyperpriorDensity: potentials must be nonnegative");
}

double HyperpriorDensity::log_density(const Eigen::Ref<const Vector>& flat) const {
  if (flat.size() != rows_ * cols_) throw DimensionError("HyperpriorDensity: plan size mismatch");
  Vector mu = Vector::Zero(rows_);
  Vector nu = Vector::Zero(cols_);
  double plan_kl = 0.0;
  for (Index i = 0; i < rows_; ++i) {
    for (Index j = 0; j < cols_; ++j) {
      const Index k = i * cols_ + j;
      const double p = flat[k];
      mu[i] += p;
      nu[j] += p;
      plan_kl += xlogx_minus(p, log_ideal_[k]);
    }
  }
  double mu_kl = 0.0;
  for (Index i = 0; i < rows_; ++i) mu_kl += xlogx_minus(mu[i], log_mu0_[i]);
  double nu_kl = 0.0;
  for (Index j = 0; j < cols_; ++j) nu_kl += xlogx_minus(nu[j], log_nu0_[j]);
  return -mu_weight_ * mu_kl - nu_weight_ * nu_kl - plan_weight_ * plan_kl;
}

double HyperpriorDensity::evaluate(const Eigen::Ref<const Vector>& flat, Eigen::Ref<Vector> gradient) const {
  if (flat.size() != rows_ * cols_ || gradient.size() != flat.size()) {
    throw DimensionError("HyperpriorDensity: plan or gradient size mismatch");
  }
  Vector mu = Vector::Zero(rows_);
  Vector nu = Vector::Zero(cols_);
  double plan_kl = 0.0;
  for (Index i = 0; i < rows_; ++i) {
    for (Index j = 0; j < cols_; ++j) {
      const Index k = i * cols_ + j;
      const double p = flat[k];
      if (!(p > 0.0)) throw DomainError("HyperpriorDensity: gradient requires a strictly interior plan");
      const double log_ratio = std::log(p) - log_ideal_[k];
      mu[i] += p;
      nu[j] += p;
      plan_kl += p * log_ratio;
      gradient[k] = -plan_weight_ * (log_ratio + 1.0);
    }
  }
  double mu_kl = 0.0;
  Vector mu_term(rows_);
  for (Index i = 0; i < rows_; ++i) {
    const double log_ratio = std::log(mu[i]) - log_mu0_[i];
    mu_kl += mu[i] * log_ratio;
    mu_term[i] = -mu_weight_ * (log_ratio + 1.0);
  }
  double nu_kl = 0.0;
  Vector nu_term(cols_);
  for (Index j = 0; j < cols_; ++j) {
    const double log_ratio = std::log(nu[j]) - log_nu0_[j];
    nu_kl += nu[j] * log_ratio;
    nu_term[j] = -nu_weight_ * (log_ratio + 1.0);
  }
  for (Index i = 0; i < rows_; ++i) {
    for (Index j = 0; j < cols_; ++j) gradient[i * cols_ + j] += mu_term[i] + nu_term[j];
  }
  return -mu_weight_ * mu_kl - nu_weight_ * nu_kl - plan_weight_ * plan_kl;
}

PlanLogDensity HyperpriorDensity::target() const {
  auto self = std::make_shared<const HyperpriorDensity>(*this);
  return PlanLogDensity{rows_, cols_,
                        [self](const Eigen::Ref<const Vector>& flat, Eigen::Ref<Vector> gradient) {
                          return self->evaluate(flat, gradient);
                        }};
}

double log_density_tilde(const TransportPlan& plan, const KnowledgeConstraints& constraints) {
  check_plan_shape(plan, constraints.rows(), constraints.cols(), "log_density_tilde");
  return HyperpriorDensity(constraints, Pair::Zero()).log_density(plan.flat());
}

double log_density(const TransportPlan& plan, const HyperpriorParams& params) {
  check_plan_shape(plan, params.constraints.rows(), params.constraints.cols(), "log_density");
  return HyperpriorDensity(params).log_density(plan.flat());
}

Matrix grad_log_density(const TransportPlan& plan, const HyperpriorParams& params) {
  check_plan_shape(plan, params.constraints.rows(), params.constraints.cols(), "grad_log_density");
  Vector gradient(plan.size());
  HyperpriorDensity(params).evaluate(plan.flat(), gradient);
  return Eigen::Map<const Matrix>(gradient.data(), plan.rows(), plan.cols());
}

Pair moment_vector(const TransportPlan& plan, const KnowledgeConstraints& constraints) {
  check_plan_shape(plan, constraints.rows(), constraints.cols(), "moment_vector");
  const auto [mu, nu] = marginals(plan);
  return {kl_divergence(mu, constraints.mu0), kl_divergence(nu, constraints.nu0)};
}

TransportPlan expected_plan(std::span<const TransportPlan> samples) {
  if (samples.empty()) throw ParameterError("expected_plan: no samples");
  const Index rows = samples.front().rows();
  const Index cols = samples.front().cols();
  Matrix acc = Matrix::Zero(rows, cols);
  for (const TransportPlan& s : samples) {
    if (s.rows() != rows || s.cols() != cols) throw DimensionError("expected_plan: samples differ in shape");
    acc += s.entries();
  }
  acc /= static_cast<double>(samples.size());
  acc /= acc.sum();
  return TransportPlan(std::move(acc));
}

Grid2x2 Grid2x2::uniform(std::size_t points_per_axis) {
  if (points_per_axis < 2) throw ParameterError("Grid2x2: need at least two points per axis");
  const auto n = static_cast<Index>(points_per_axis);
  // Cell centres keep every lattice point off the simplex edges.
  Vector axis(n);
  for (Index k = 0; k < n; ++k) axis[k] = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
  return Grid2x2{axis, axis};
}

namespace {

void require_2x2(const HyperpriorParams& params, const char* where) {
  if (params.constraints.rows() != 2 || params.constraints.cols() != 2) {
    throw CapacityError(std::string(where) + ": only 2x2 plans are supported");
  }
}

}  // namespace

Matrix marginal_density_grid_2x2(const HyperpriorParams& params, const Grid2x2& grid, const QuadratureSpec& quad) {
  require_2x2(params, "marginal_density_grid_2x2");
  const HyperpriorDensity density(params);
  const GaussLegendre rule(quad.order);
  Matrix field = Matrix::Zero(grid.p11.size(), grid.p12.size());
  Vector point(4);
  for (Index a = 0; a < grid.p11.size(); ++a) {
    for (Index b = 0; b < grid.p12.size(); ++b) {
      const double p11 = grid.p11[a];
      const double p12 = grid.p12[b];
      const double rest = 1.0 - p11 - p12;
      if (!(p11 > 0.0 && p12 > 0.0 && rest > 0.0)) continue;
      field(a, b) = rule.integrate(
          [&](double p21) {
            point << p11, p12, p21, rest - p21;
            return std::exp(density.log_density(point));
          },
          0.0, rest);
    }
  }
  return field;
}

double log_normalizer_2x2(const HyperpriorParams& params, const QuadratureSpec& quad) {
  require_2x2(params, "log_normalizer_2x2");
  const HyperpriorDensity density(params);
  const GaussLegendre rule(quad.order);
  std::vector<double> logs;
  std::vector<double> weights;
  logs.reserve(quad.order * quad.order * quad.order);
  weights.reserve(logs.capacity());
  Vector point(4);
  for (const auto& n11 : rule.nodes(0.0, 1.0)) {
    for (const auto& n12 : rule.nodes(0.0, 1.0 - n11.x)) {
      const double rest = 1.0 - n11.x - n12.x;
      for (const auto& n21 : rule.nodes(0.0, rest)) {
        point << n11.x, n12.x, n21.x, rest - n21.x;
        logs.push_back(density.log_density(point));
        weights.push_back(n11.w * n12.w * n21.w);
      }
    }
  }
  const double peak = *std::max_element(logs.begin(), logs.end());
  double acc = 0.0;
  for (std::size_t k = 0; k < logs.size(); ++k) acc += weights[k] * std::exp(logs[k] - peak);
  return peak + std::log(acc);
}

TransportPlan expected_plan_2x2(const HyperpriorParams& params, const QuadratureSpec& quad) {
  require_2x2(params, "expected_plan_2x2");
  const HyperpriorDensity density(params);
  const GaussLegendre rule(quad.order);
  std::vector<double> logs;
  std::vector<double> weights;
  std::vector<Eigen::Vector4d> points;
  Vector point(4);
  for (const auto& n11 : rule.nodes(0.0, 1.0)) {
    for (const auto& n12 : rule.nodes(0.0, 1.0 - n11.x)) {
      const double rest = 1.0 - n11.x - n12.x;
      for (const auto& n21 : rule.nodes(0.0, rest)) {
        point << n11.x, n12.x, n21.x, rest - n21.x;
        logs.push_back(density.log_density(point));
        weights.push_back(n11.w * n12.w * n21.w);
        points.emplace_back(point);
      }
    }
  }
  const double peak = *std::max_element(logs.begin(), logs.end());
  double mass = 0.0;
  Eigen::Vector4d first = Eigen::Vector4d::Zero();
  for (std::size_t k = 0; k < logs.size(); ++k) {
    const double w = weights[k] * std::exp(logs[k] - peak);
    mass += w;
    first += w * points[k];
  }
  first /= mass;
  first /= first.sum();
  return TransportPlan::from_flat(first, 2, 2);
}

ConditionalSlice::ConditionalSlice(const TransportPlan& plan, Index k, Index l, const HyperpriorParams& params)
    : density_(params), base_(plan.flat()), slot_(k * plan.cols() + l), upper_(0.0) {
  check_plan_shape(plan, params.constraints.rows(), params.constraints.cols(), "conditional_slice_log_density");
  if (k < 0 || l < 0 || k >= plan.rows() || l >= plan.cols()) throw DomainError("conditional slice: index out of range");
  const Index last = plan.size() - 1;
  if (slot_ == last) throw DomainError("conditional slice: (m, n) is the dependent entry");
  double fixed = 0.0;
  for (Index s = 0; s < last; ++s) {
    if (s != slot_) fixed += base_[s];
  }
  upper_ = 1.0 - fixed;
  if (!(upper_ > 0.0)) throw DomainError("conditional slice: fixed entries leave no room (c_kl >= 1)");
}

double ConditionalSlice::operator()(double value) const {
  if (!(value > 0.0 && value < upper_)) return kNegInf;
  Vector point = base_;
  point[slot_] = value;
  point[point.size() - 1] = upper_ - value;
  return density_.log_density(point);
}

ConditionalSlice conditional_slice_log_density(const TransportPlan& plan, Index k, Index l,
                                               const HyperpriorParams& params) {
  return ConditionalSlice(plan, k, l, params);
}

}  // namespace hfpdot
