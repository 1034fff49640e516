#include "hfpdot/eot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace hfpdot {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr long kNewtonPolishSteps = 50;
constexpr long kSinkhornBurst = 1000;

double log_sum_exp(const double* values, Index count, Index stride) {
  double peak = kNegInf;
  for (Index k = 0; k < count; ++k) peak = std::max(peak, values[k * stride]);
  if (peak == kNegInf) return kNegInf;
  double acc = 0.0;
  for (Index k = 0; k < count; ++k) acc += std::exp(values[k * stride] - peak);
  return peak + std::log(acc);
}

void require_positive(const DiscreteDistribution& d, const char* name) {
  if (!(d.weights().array() > 0.0).all()) {
    throw DomainError(std::string("sinkhorn: ") + name + " must be strictly positive");
  }
}

// Dense tableau simplex for min c'x s.t. Ax = b, x >= 0 with b >= 0.
// Bland's rule keeps the highly degenerate transportation polytope from
// cycling.
class TableauSimplex {
 public:
  TableauSimplex(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c)
      : rows_(a.rows()), vars_(a.cols()), cost_(c) {
    tableau_ = Eigen::MatrixXd::Zero(rows_ + 1, vars_ + rows_ + 1);
    tableau_.topLeftCorner(rows_, vars_) = a;
    tableau_.block(0, vars_, rows_, rows_).setIdentity();
    tableau_.topRightCorner(rows_, 1) = b;
    basis_.resize(static_cast<std::size_t>(rows_));
    std::iota(basis_.begin(), basis_.end(), vars_);
  }

  Eigen::VectorXd solve() {
    // Phase I: minimize the sum of artificials.
    Eigen::RowVectorXd phase1 = Eigen::RowVectorXd::Zero(tableau_.cols());
    phase1.segment(vars_, rows_).setOnes();
    set_objective(phase1);
    iterate(vars_ + rows_);
    if (-tableau_(rows_, tableau_.cols() - 1) > 1e-9) {
      throw DomainError("exact_ot_small: marginals are inconsistent (infeasible LP)");
    }
    drive_out_artificials();

    Eigen::RowVectorXd phase2 = Eigen::RowVectorXd::Zero(tableau_.cols());
    phase2.head(vars_) = cost_.transpose();
    set_objective(phase2);
    iterate(vars_);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(vars_);
    for (Index r = 0; r < rows_; ++r) {
      if (basis_[static_cast<std::size_t>(r)] < vars_) {
        x[basis_[static_cast<std::size_t>(r)]] = std::max(0.0, tableau_(r, tableau_.cols() - 1));
      }
    }
    return x;
  }

 private:
  static constexpr double kPivotTol = 1e-12;

  void set_objective(const Eigen::RowVectorXd& c) {
    tableau_.row(rows_) = c;
    for (Index r = 0; r < rows_; ++r) {
      const Index j = basis_[static_cast<std::size_t>(r)];
      if (c[j] != 0.0) tableau_.row(rows_) -= c[j] * tableau_.row(r);
    }
  }

  void pivot(Index row, Index col) {
    tableau_.row(row) /= tableau_(row, col);
    for (Index r = 0; r <= rows_; ++r) {
      if (r != row && tableau_(r, col) != 0.0) tableau_.row(r) -= tableau_(r, col) * tableau_.row(row);
    }
    basis_[static_cast<std::size_t>(row)] = col;
  }

  void iterate(Index allowed_columns) {
    const Index rhs = tableau_.cols() - 1;
    for (;;) {
      Index entering = -1;
      for (Index j = 0; j < allowed_columns; ++j) {
        if (tableau_(rows_, j) < -kPivotTol) {
          entering = j;
          break;
        }
      }
      if (entering < 0) return;
      Index leaving = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Index r = 0; r < rows_; ++r) {
        const double a = tableau_(r, entering);
        if (a > kPivotTol) {
          const double ratio = tableau_(r, rhs) / a;
          if (ratio < best - kPivotTol ||
              (std::abs(ratio - best) <= kPivotTol && basis_[static_cast<std::size_t>(r)] < basis_[static_cast<std::size_t>(leaving)])) {
            best = ratio;
            leaving = r;
          }
        }
      }
      if (leaving < 0) throw DomainError("exact_ot_small: unbounded LP");
      pivot(leaving, entering);
    }
  }

  void drive_out_artificials() {
    for (Index r = 0; r < rows_; ++r) {
      if (basis_[static_cast<std::size_t>(r)] < vars_) continue;
      for (Index j = 0; j < vars_; ++j) {
        if (std::abs(tableau_(r, j)) > 1e-9) {
          pivot(r, j);
          break;
        }
      }
    }
  }

  Index rows_;
  Index vars_;
  Eigen::VectorXd cost_;
  Eigen::MatrixXd tableau_;
  std::vector<Index> basis_;
};

}  // namespace

IdealDesign gibbs_kernel(const CostMatrix& cost, double epsilon, const std::optional<TransportPlan>& phi) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ParameterError("gibbs_kernel: epsilon must be positive");
  const Index m = cost.rows();
  const Index n = cost.cols();
  TransportPlan structure = phi ? *phi : TransportPlan::uniform(m, n);
  if (structure.rows() != m || structure.cols() != n) throw DimensionError("gibbs_kernel: phi shape differs from cost");
  if (!structure.is_interior(std::numeric_limits<double>::min())) {
    throw DomainError("gibbs_kernel: phi must be strictly positive");
  }
  Matrix log_plan = (-cost.values().array() / epsilon + structure.entries().array().log()).matrix();
  const double normalizer = log_sum_exp(log_plan.data(), log_plan.size(), 1);
  log_plan.array() -= normalizer;
  Matrix plan = log_plan.array().exp().matrix();
  plan /= plan.sum();
  return IdealDesign{TransportPlan(std::move(plan)), std::move(log_plan), epsilon, std::move(structure)};
}

namespace {

struct SinkhornPass {
  long iterations = 0;
  double error = 0.0;
};

// Alternating log-domain updates of the scalings f, g in place. The row
// error is measured against the LSE computed for the row update.
SinkhornPass sinkhorn_pass(const Matrix& log_kernel, const Vector& log_mu, const Vector& log_nu,
                           const DiscreteDistribution& mu, Vector& f, Vector& g, double tol, long max_iter) {
  const Index m = log_kernel.rows();
  const Index n = log_kernel.cols();
  std::vector<double> row(static_cast<std::size_t>(n));
  std::vector<double> column(static_cast<std::size_t>(m));
  SinkhornPass pass;
  pass.error = std::numeric_limits<double>::infinity();
  while (pass.iterations < max_iter) {
    ++pass.iterations;
    pass.error = 0.0;
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = log_kernel(i, j) + g[j];
      const double lse = log_sum_exp(row.data(), n, 1);
      pass.error = std::max(pass.error, std::abs(std::exp(f[i] + lse) - mu[i]));
      f[i] = log_mu[i] - lse;
    }
    if (pass.iterations > 1 && pass.error <= tol) break;
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i < m; ++i) column[static_cast<std::size_t>(i)] = log_kernel(i, j) + f[i];
      g[j] = log_nu[j] - log_sum_exp(column.data(), m, 1);
    }
  }
  return pass;
}

struct Residual {
  Matrix plan;
  Vector gradient;
  double error = 0.0;
};

// Plan and dual gradient (mu - rows, nu - cols with the last column
// dropped as the gauge) at the scalings (f, g).
Residual residual(const Matrix& log_kernel, const DiscreteDistribution& mu, const DiscreteDistribution& nu,
                  const Vector& f, const Vector& g) {
  const Index m = log_kernel.rows();
  const Index n = log_kernel.cols();
  Residual r;
  r.plan.resize(m, n);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) r.plan(i, j) = std::exp(log_kernel(i, j) + f[i] + g[j]);
  }
  r.gradient.resize(m + n - 1);
  for (Index i = 0; i < m; ++i) r.gradient[i] = mu[i] - r.plan.row(i).sum();
  for (Index j = 0; j + 1 < n; ++j) r.gradient[m + j] = nu[j] - r.plan.col(j).sum();
  r.error = std::max(r.gradient.cwiseAbs().maxCoeff(), std::abs(nu[n - 1] - r.plan.col(n - 1).sum()));
  return r;
}

// Newton iterations on the concave dual with a backtracking search on the
// marginal error. Sinkhorn stalls at small epsilon; a handful of these
// steps finish the job once the scalings are close.
long newton_polish(const Matrix& log_kernel, const DiscreteDistribution& mu, const DiscreteDistribution& nu,
                   Vector& f, Vector& g, double tol, long max_steps) {
  const Index m = log_kernel.rows();
  const Index n = log_kernel.cols();
  long steps = 0;
  Residual current = residual(log_kernel, mu, nu, f, g);
  while (current.error > tol && steps < max_steps) {
    ++steps;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m + n - 1, m + n - 1);
    for (Index i = 0; i < m; ++i) h(i, i) = current.plan.row(i).sum();
    for (Index j = 0; j + 1 < n; ++j) h(m + j, m + j) = current.plan.col(j).sum();
    h.block(0, m, m, n - 1) = current.plan.leftCols(n - 1);
    h.block(m, 0, n - 1, m) = current.plan.leftCols(n - 1).transpose();
    h.diagonal().array() += 1e-14 * h.diagonal().maxCoeff();
    const Eigen::VectorXd delta = h.ldlt().solve(current.gradient);
    if (!delta.allFinite()) break;
    bool improved = false;
    for (double t = 1.0; t > 1e-6; t *= 0.5) {
      Vector f_try = f + t * delta.head(m);
      Vector g_try = g;
      g_try.head(n - 1) += t * delta.tail(n - 1);
      Residual trial = residual(log_kernel, mu, nu, f_try, g_try);
      if (trial.error < current.error) {
        f = std::move(f_try);
        g = std::move(g_try);
        current = std::move(trial);
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  return steps;
}

// Short Sinkhorn burst, Newton polish, and the remaining Sinkhorn budget
// plus a second polish only if the first attempt falls short.
long solve_stage(const Matrix& log_kernel, const Vector& log_mu, const Vector& log_nu, const DiscreteDistribution& mu,
                 const DiscreteDistribution& nu, Vector& f, Vector& g, double tol, long max_iter) {
  const long burst = std::min(max_iter, kSinkhornBurst);
  SinkhornPass pass = sinkhorn_pass(log_kernel, log_mu, log_nu, mu, f, g, tol, burst);
  long iterations = pass.iterations;
  if (pass.error <= tol && residual(log_kernel, mu, nu, f, g).error <= tol) return iterations;
  const Vector f_saved = f;
  const Vector g_saved = g;
  iterations += newton_polish(log_kernel, mu, nu, f, g, tol, kNewtonPolishSteps);
  if (residual(log_kernel, mu, nu, f, g).error <= tol) return iterations;
  f = f_saved;
  g = g_saved;
  pass = sinkhorn_pass(log_kernel, log_mu, log_nu, mu, f, g, tol, max_iter - burst);
  iterations += pass.iterations;
  if (residual(log_kernel, mu, nu, f, g).error > tol) iterations += newton_polish(log_kernel, mu, nu, f, g, tol, kNewtonPolishSteps);
  return iterations;
}

}  // namespace

EotSolution sinkhorn(const DiscreteDistribution& mu0, const DiscreteDistribution& nu0, const IdealDesign& ideal,
                     const SinkhornOptions& options) {
  const Matrix& log_kernel = ideal.log_plan;
  const Index m = log_kernel.rows();
  const Index n = log_kernel.cols();
  if (mu0.size() != m || nu0.size() != n) throw DimensionError("sinkhorn: marginal sizes differ from the ideal plan");
  if (!(options.tol > 0.0) || options.max_iter < 1) throw ParameterError("sinkhorn: tol and max_iter must be positive");
  require_positive(mu0, "mu0");
  require_positive(nu0, "nu0");
  for (Index i = 0; i < m; ++i) {
    if (log_sum_exp(log_kernel.row(i).data(), n, 1) == kNegInf) throw DegeneracyError("sinkhorn: zero kernel row");
  }
  for (Index j = 0; j < n; ++j) {
    if (log_sum_exp(log_kernel.data() + j, m, n) == kNegInf) throw DegeneracyError("sinkhorn: zero kernel column");
  }

  const Vector log_mu = mu0.weights().array().log();
  const Vector log_nu = nu0.weights().array().log();
  Vector f = Vector::Zero(m);
  Vector g = Vector::Zero(n);
  long iter = 0;

  if (options.epsilon_scaling) {
    // Anneal the temperature of the cost part of the kernel, warm-starting
    // each stage from the previous scalings rescaled to the new temperature.
    const Matrix log_phi = ideal.phi.entries().array().log().matrix();
    const Matrix cost_part = log_kernel - log_phi;
    double spread = 0.0;
    const double top = cost_part.maxCoeff();
    for (Index k = 0; k < cost_part.size(); ++k) {
      if (std::isfinite(cost_part.data()[k])) spread = std::max(spread, top - cost_part.data()[k]);
    }
    double scale = spread / kSinkhornScalingSpread;
    double previous = scale;
    while (scale > 1.0) {
      const Matrix stage = log_phi + cost_part / scale;
      const double shift = 0.5 * (f.mean() - g.mean());
      f.array() -= shift;
      g.array() += shift;
      f *= previous / scale;
      g *= previous / scale;
      iter += solve_stage(stage, log_mu, log_nu, mu0, nu0, f, g, std::max(options.tol, 1e-10), options.max_iter);
      previous = scale;
      scale *= 0.5;
    }
    if (previous > 1.0) {
      f *= previous;
      g *= previous;
    }
  }

  iter += solve_stage(log_kernel, log_mu, log_nu, mu0, nu0, f, g, options.tol, options.max_iter);

  Matrix plan(m, n);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) plan(i, j) = std::exp(log_kernel(i, j) + f[i] + g[j]);
  }
  // Final exact error against both marginals.
  double final_error = 0.0;
  for (Index i = 0; i < m; ++i) final_error = std::max(final_error, std::abs(plan.row(i).sum() - mu0[i]));
  for (Index j = 0; j < n; ++j) final_error = std::max(final_error, std::abs(plan.col(j).sum() - nu0[j]));
  if (final_error > options.tol) {
    throw ConvergenceError("sinkhorn: marginal error " + std::to_string(final_error) + " after " +
                               std::to_string(iter) + " iterations",
                           final_error, iter);
  }
  plan /= compensated_sum(Eigen::Map<const Vector>(plan.data(), plan.size()));
  return EotSolution{TransportPlan(std::move(plan)), iter, final_error};
}

TransportPlan exact_ot_small(const DiscreteDistribution& mu0, const DiscreteDistribution& nu0, const CostMatrix& cost) {
  const Index m = mu0.size();
  const Index n = nu0.size();
  if (cost.rows() != m || cost.cols() != n) throw DimensionError("exact_ot_small: cost shape differs from marginals");
  if (m * n > kExactOtMaxEntries) {
    throw CapacityError("exact_ot_small: " + std::to_string(m * n) + " entries exceed the oracle limit of " +
                        std::to_string(kExactOtMaxEntries));
  }
  // Row constraints for every source, column constraints for all but the
  // last target (the dropped one is implied by the totals).
  const Index rows = m + n - 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, m * n);
  Eigen::VectorXd b(rows);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) a(i, i * n + j) = 1.0;
    b[i] = mu0[i];
  }
  for (Index j = 0; j + 1 < n; ++j) {
    for (Index i = 0; i < m; ++i) a(m + j, i * n + j) = 1.0;
    b[m + j] = nu0[j];
  }
  Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(cost.values().data(), m * n);
  TableauSimplex lp(a, b, c);
  Vector x = lp.solve();
  x /= compensated_sum(x);
  return TransportPlan::from_flat(x, m, n);
}

double wasserstein2_1d(const Vector& mu, const Vector& nu, const Vector& support_x, const Vector& support_y) {
  if (mu.size() != support_x.size() || nu.size() != support_y.size()) {
    throw DimensionError("wasserstein2_1d: weights and supports differ in length");
  }
  if (mu.size() == 0 || nu.size() == 0) throw DimensionError("wasserstein2_1d: empty support");
  auto order = [](const Vector& s) {
    std::vector<Index> idx(static_cast<std::size_t>(s.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return s[a] < s[b]; });
    return idx;
  };
  const auto ix = order(support_x);
  const auto iy = order(support_y);
  auto cumulative = [](const Vector& w, const std::vector<Index>& idx) {
    std::vector<double> c(idx.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      acc += w[idx[k]];
      c[k] = acc;
    }
    c.back() = 1.0;
    return c;
  };
  const auto fx = cumulative(mu, ix);
  const auto gy = cumulative(nu, iy);

  std::vector<double> terms;
  terms.reserve(ix.size() + iy.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double previous = 0.0;
  while (i < ix.size() && j < iy.size()) {
    const double t = std::min(fx[i], gy[j]);
    const double d = support_x[ix[i]] - support_y[iy[j]];
    terms.push_back((t - previous) * d * d);
    previous = t;
    if (fx[i] <= t) ++i;
    if (gy[j] <= t) ++j;
  }
  return std::max(0.0, compensated_sum(std::span<const double>(terms)));
}

double wasserstein2_1d(const DiscreteDistribution& mu, const DiscreteDistribution& nu, const Vector& support_x,
                       const Vector& support_y) {
  return wasserstein2_1d(mu.weights(), nu.weights(), support_x, support_y);
}

}  // namespace hfpdot
