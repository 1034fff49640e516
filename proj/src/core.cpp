#include "hfpdot/core.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace hfpdot {
namespace {

void check_weights(const Eigen::Ref<const Vector>& w, const char* what) {
  for (Index i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w[i]) || w[i] < 0.0) {
      throw DomainError(std::string(what) + ": entry " + std::to_string(i) + " is negative or not finite");
    }
  }
  const double total = compensated_sum(w);
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw DomainError(std::string(what) + ": entries sum to " + std::to_string(total) + ", expected 1");
  }
}

double xlogx_ratio(double p, double q) {
  if (p == 0.0) return 0.0;
  if (q == 0.0) return std::numeric_limits<double>::infinity();
  return p * std::log(p / q);
}

}  // namespace

double compensated_sum(std::span<const double> values) {
  double sum = 0.0;
  double c = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      c += (sum - t) + v;
    } else {
      c += (v - t) + sum;
    }
    sum = t;
  }
  return sum + c;
}

DiscreteDistribution::DiscreteDistribution(Vector weights) : weights_(std::move(weights)) {
  if (weights_.size() < 2) throw DimensionError("DiscreteDistribution needs at least two weights");
  check_weights(weights_, "DiscreteDistribution");
}

DiscreteDistribution DiscreteDistribution::uniform(Index size) {
  if (size < 2) throw DimensionError("DiscreteDistribution needs at least two weights");
  return DiscreteDistribution(Vector::Constant(size, 1.0 / static_cast<double>(size)));
}

DiscreteDistribution DiscreteDistribution::normalized(Vector weights) {
  if ((weights.array() < 0.0).any() || !weights.allFinite()) {
    throw DomainError("normalized: weights must be finite and nonnegative");
  }
  const double total = compensated_sum(weights);
  if (!(total > 0.0)) throw DomainError("normalized: weights sum to zero");
  weights /= total;
  return DiscreteDistribution(std::move(weights));
}

bool DiscreteDistribution::is_interior(double floor) const { return (weights_.array() >= floor).all(); }

CostMatrix::CostMatrix(Matrix costs) : costs_(std::move(costs)) {
  if (costs_.rows() < 1 || costs_.cols() < 1) throw DimensionError("CostMatrix must be nonempty");
  if (!costs_.allFinite() || (costs_.array() < 0.0).any()) {
    throw DomainError("CostMatrix entries must be finite and nonnegative");
  }
}

CostMatrix CostMatrix::squared_euclidean_grid(Index rows, Index cols) {
  Vector x = Vector::LinSpaced(rows, 0.0, static_cast<double>(rows - 1));
  Vector y = Vector::LinSpaced(cols, 0.0, static_cast<double>(cols - 1));
  return squared_euclidean(x, y);
}

CostMatrix CostMatrix::squared_euclidean(const Vector& x, const Vector& y) {
  Matrix c(x.size(), y.size());
  for (Index i = 0; i < x.size(); ++i) {
    for (Index j = 0; j < y.size(); ++j) {
      const double d = x[i] - y[j];
      c(i, j) = d * d;
    }
  }
  return CostMatrix(std::move(c));
}

TransportPlan::TransportPlan(Matrix entries) : entries_(std::move(entries)) {
  if (entries_.rows() < 2 || entries_.cols() < 2) throw DimensionError("TransportPlan needs at least 2x2 entries");
  check_weights(Eigen::Map<const Vector>(entries_.data(), entries_.size()), "TransportPlan");
}

TransportPlan TransportPlan::uniform(Index rows, Index cols) {
  return TransportPlan(Matrix::Constant(rows, cols, 1.0 / static_cast<double>(rows * cols)));
}

TransportPlan TransportPlan::from_flat(const Eigen::Ref<const Vector>& flat, Index rows, Index cols) {
  if (flat.size() != rows * cols) {
    throw DimensionError("from_flat: expected " + std::to_string(rows * cols) + " entries, got " +
                         std::to_string(flat.size()));
  }
  Matrix m = Eigen::Map<const Matrix>(flat.data(), rows, cols);
  return TransportPlan(std::move(m));
}

TransportPlan TransportPlan::outer(const DiscreteDistribution& mu, const DiscreteDistribution& nu) {
  Matrix m = mu.weights() * nu.weights().transpose();
  return TransportPlan(std::move(m));
}

Vector TransportPlan::flat() const { return Eigen::Map<const Vector>(entries_.data(), entries_.size()); }

Vector TransportPlan::row_sums() const {
  Vector s(rows());
  for (Index i = 0; i < rows(); ++i) {
    s[i] = compensated_sum(std::span<const double>(entries_.row(i).data(), static_cast<std::size_t>(cols())));
  }
  return s;
}

Vector TransportPlan::col_sums() const {
  Vector s(cols());
  for (Index j = 0; j < cols(); ++j) {
    Vector column = entries_.col(j);
    s[j] = compensated_sum(column);
  }
  return s;
}

bool TransportPlan::is_interior(double floor) const { return (entries_.array() >= floor).all(); }

double kl_divergence(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  if (p.size() != q.size()) {
    throw DimensionError("kl_divergence: sizes " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
  Vector terms(p.size());
  for (Index i = 0; i < p.size(); ++i) {
    terms[i] = xlogx_ratio(p[i], q[i]);
    if (std::isinf(terms[i])) return std::numeric_limits<double>::infinity();
  }
  // Rounding can push a true zero slightly negative.
  return std::max(0.0, compensated_sum(terms));
}

std::pair<DiscreteDistribution, DiscreteDistribution> marginals(const TransportPlan& plan) {
  return {DiscreteDistribution::normalized(plan.row_sums()), DiscreteDistribution::normalized(plan.col_sums())};
}

double plan_entropy(const TransportPlan& plan) {
  const Matrix& e = plan.entries();
  Vector terms(e.size());
  for (Index k = 0; k < e.size(); ++k) {
    const double p = e.data()[k];
    terms[k] = p > 0.0 ? -p * std::log(p) : 0.0;
  }
  return std::max(0.0, compensated_sum(terms));
}

double transport_cost(const CostMatrix& cost, const TransportPlan& plan) {
  if (cost.rows() != plan.rows() || cost.cols() != plan.cols()) {
    throw DimensionError("transport_cost: cost and plan shapes differ");
  }
  Vector terms = (cost.values().array() * plan.entries().array()).matrix().reshaped<Eigen::RowMajor>();
  return compensated_sum(terms);
}

SimplexChart::SimplexChart(Index dimension, double floor) : dimension_(dimension), floor_(floor) {
  if (dimension < 2) throw DimensionError("SimplexChart needs dimension >= 2");
  if (!(floor >= 0.0) || floor >= 1.0 / static_cast<double>(dimension)) {
    throw ParameterError("SimplexChart floor must lie in [0, 1/q)");
  }
}

void SimplexChart::check_size(Index got, Index expected) const {
  if (got != expected) {
    throw DimensionError("SimplexChart: expected length " + std::to_string(expected) + ", got " +
                         std::to_string(got));
  }
}

Vector SimplexChart::to_unconstrained(const Eigen::Ref<const Vector>& p) const {
  check_size(p.size(), dimension_);
  if ((p.array() <= 0.0).any() || !p.allFinite()) {
    throw DomainError("to_unconstrained: point is on the simplex boundary");
  }
  const double anchor = std::log(p[dimension_ - 1]);
  Vector z(dimension_ - 1);
  for (Index k = 0; k + 1 < dimension_; ++k) z[k] = std::log(p[k]) - anchor;
  return z;
}

Vector SimplexChart::to_simplex(const Eigen::Ref<const Vector>& z) const {
  check_size(z.size(), dimension_ - 1);
  const double shift = std::max(0.0, z.size() > 0 ? z.maxCoeff() : 0.0);
  Vector p(dimension_);
  for (Index k = 0; k + 1 < dimension_; ++k) p[k] = std::exp(z[k] - shift);
  p[dimension_ - 1] = std::exp(-shift);
  p /= compensated_sum(p);
  for (Index k = 0; k < dimension_; ++k) p[k] = std::max(p[k], floor_);
  return p;
}

double SimplexChart::log_jacobian(const Eigen::Ref<const Vector>& z) const {
  check_size(z.size(), dimension_ - 1);
  const double shift = std::max(0.0, z.maxCoeff());
  double acc = std::exp(-shift);
  for (Index k = 0; k < z.size(); ++k) acc += std::exp(z[k] - shift);
  const double log_normalizer = shift + std::log(acc);
  return z.sum() - static_cast<double>(dimension_) * log_normalizer;
}

Vector SimplexChart::log_jacobian_gradient(const Eigen::Ref<const Vector>& p) const {
  check_size(p.size(), dimension_);
  return (1.0 - static_cast<double>(dimension_) * p.head(dimension_ - 1).array()).matrix();
}

Vector SimplexChart::pullback(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& coordinate_gradient) const {
  check_size(p.size(), dimension_);
  check_size(coordinate_gradient.size(), dimension_);
  const double mean = p.dot(coordinate_gradient);
  return (p.head(dimension_ - 1).array() * (coordinate_gradient.head(dimension_ - 1).array() - mean)).matrix();
}

Vector simplex_to_unconstrained(const DiscreteDistribution& p, const SimplexChart& chart) {
  return chart.to_unconstrained(p.weights());
}

DiscreteDistribution unconstrained_to_simplex(const Vector& z, const SimplexChart& chart) {
  return DiscreteDistribution(chart.to_simplex(z));
}

}  // namespace hfpdot
