#pragma once

#include <Eigen/Dense>
#include <span>
#include <utility>

#include "hfpdot/errors.hpp"

namespace hfpdot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// |sum - 1| accepted for distributions and plans.
inline constexpr double kSumTolerance = 1e-12;
/// Round-trip accuracy of the simplex chart.
inline constexpr double kChartRoundTripTolerance = 1e-10;
/// Smallest probability produced by the inverse chart; keeps logs finite.
inline constexpr double kProbabilityFloor = 1e-300;

/// Neumaier-compensated sum.
double compensated_sum(std::span<const double> values);

inline double compensated_sum(const Eigen::Ref<const Vector>& values) {
  return compensated_sum(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

/// A point of the probability simplex (length >= 2).
class DiscreteDistribution {
 public:
  explicit DiscreteDistribution(Vector weights);

  static DiscreteDistribution uniform(Index size);
  /// Rescales nonnegative, not-all-zero weights to sum one.
  static DiscreteDistribution normalized(Vector weights);

  Index size() const noexcept { return weights_.size(); }
  double operator[](Index i) const { return weights_[i]; }
  const Vector& weights() const noexcept { return weights_; }

  /// True when every weight is at least `floor`.
  bool is_interior(double floor = kProbabilityFloor) const;

 private:
  Vector weights_;
};

/// Nonnegative m x n cost matrix with finite entries.
class CostMatrix {
 public:
  explicit CostMatrix(Matrix costs);

  /// Nodes at 0, 1, ..., d-1 on the line with C_ij = (i - j)^2.
  static CostMatrix squared_euclidean_grid(Index rows, Index cols);
  /// C_ij = (x_i - y_j)^2 for arbitrary 1D supports.
  static CostMatrix squared_euclidean(const Vector& x, const Vector& y);

  Index rows() const noexcept { return costs_.rows(); }
  Index cols() const noexcept { return costs_.cols(); }
  double operator()(Index i, Index j) const { return costs_(i, j); }
  const Matrix& values() const noexcept { return costs_; }
  double max() const { return costs_.maxCoeff(); }

 private:
  Matrix costs_;
};

/// Nonnegative m x n matrix summing to one. Entry (m-1, n-1) is the
/// dependent coordinate whenever the plan is flattened (row-major).
class TransportPlan {
 public:
  explicit TransportPlan(Matrix entries);

  static TransportPlan uniform(Index rows, Index cols);
  static TransportPlan from_flat(const Eigen::Ref<const Vector>& flat, Index rows, Index cols);
  static TransportPlan outer(const DiscreteDistribution& mu, const DiscreteDistribution& nu);

  Index rows() const noexcept { return entries_.rows(); }
  Index cols() const noexcept { return entries_.cols(); }
  Index size() const noexcept { return entries_.size(); }
  double operator()(Index i, Index j) const { return entries_(i, j); }
  const Matrix& entries() const noexcept { return entries_; }

  /// Row-major copy of the entries.
  Vector flat() const;
  Vector row_sums() const;
  Vector col_sums() const;
  bool is_interior(double floor = kProbabilityFloor) const;

 private:
  Matrix entries_;
};

/// Kullback-Leibler divergence with the 0 log 0 = 0 convention; +infinity
/// when q_i = 0 < p_i.
double kl_divergence(const DiscreteDistribution& p, const DiscreteDistribution& q);

/// Row sums (mu) and column sums (nu).
std::pair<DiscreteDistribution, DiscreteDistribution> marginals(const TransportPlan& plan);

/// Shannon entropy in nats.
double plan_entropy(const TransportPlan& plan);

/// Transport cost <C, pi>.
double transport_cost(const CostMatrix& cost, const TransportPlan& plan);

/// Anchored log-ratio chart between the open simplex of dimension q - 1 and
/// R^{q-1}: z_k = log(p_k / p_q). The inverse is a softmax with the last
/// logit fixed to zero; its Jacobian is taken w.r.t. the first q - 1
/// simplex coordinates, so log|det J| = sum_k log p_k over all q entries.
class SimplexChart {
 public:
  explicit SimplexChart(Index dimension, double floor = kProbabilityFloor);

  Index dimension() const noexcept { return dimension_; }
  Index unconstrained_dimension() const noexcept { return dimension_ - 1; }
  double floor() const noexcept { return floor_; }

  /// Throws DomainError when some p_k <= 0.
  Vector to_unconstrained(const Eigen::Ref<const Vector>& p) const;
  Vector to_simplex(const Eigen::Ref<const Vector>& z) const;
  double log_jacobian(const Eigen::Ref<const Vector>& z) const;

  /// d log|det J| / dz evaluated at p = to_simplex(z).
  Vector log_jacobian_gradient(const Eigen::Ref<const Vector>& p) const;
  /// Pulls a gradient w.r.t. all q simplex entries back to z:
  /// (dz)_a = p_a * (g_a - <p, g>).
  Vector pullback(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& coordinate_gradient) const;

 private:
  void check_size(Index got, Index expected) const;

  Index dimension_;
  double floor_;
};

Vector simplex_to_unconstrained(const DiscreteDistribution& p, const SimplexChart& chart);
DiscreteDistribution unconstrained_to_simplex(const Vector& z, const SimplexChart& chart);

}  // namespace hfpdot
