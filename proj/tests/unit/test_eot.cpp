#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hfpdot/eot.hpp"
#include "oracles.hpp"

using namespace hfpdot;

namespace {

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index k = 0;
  for (double x : values) v[k++] = x;
  return v;
}

Vector random_simplex(Index q, std::mt19937_64& gen) {
  std::gamma_distribution<double> gamma(1.0);
  Vector w(q);
  for (Index k = 0; k < q; ++k) w[k] = gamma(gen) + 1e-2;
  return w / w.sum();
}

Matrix random_cost(Index m, Index n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix c(m, n);
  for (Index k = 0; k < c.size(); ++k) c.data()[k] = u(gen);
  return c;
}

double marginal_gap(const TransportPlan& plan, const DiscreteDistribution& mu, const DiscreteDistribution& nu) {
  return std::max((plan.row_sums() - mu.weights()).cwiseAbs().maxCoeff(),
                  (plan.col_sums() - nu.weights()).cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("gibbs kernel") {
  const IdealDesign flat = gibbs_kernel(CostMatrix(Matrix::Zero(3, 3)), 1.0);
  CHECK((flat.plan.entries().array() - 1.0 / 9.0).abs().maxCoeff() < 1e-15);

  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  const IdealDesign g = gibbs_kernel(CostMatrix(c), 1.0);
  const double z = 2.0 + 2.0 * std::exp(-1.0);
  CHECK(g.plan(0, 0) == doctest::Approx(1.0 / z).epsilon(1e-14));
  CHECK(g.plan(0, 1) == doctest::Approx(std::exp(-1.0) / z).epsilon(1e-14));
  CHECK(g.plan(0, 0) == doctest::Approx(0.365529).epsilon(1e-5));
  CHECK(g.plan(1, 0) == doctest::Approx(0.134471).epsilon(1e-5));
  CHECK(g.log_plan(0, 1) == doctest::Approx(std::log(g.plan(0, 1))));

  const IdealDesign cold = gibbs_kernel(CostMatrix(c), 1e-3);
  CHECK(cold.plan(0, 0) == doctest::Approx(0.5));
  CHECK(cold.plan(0, 1) < 1e-100);
  CHECK(std::isfinite(cold.log_plan(0, 1)));

  CHECK_THROWS_AS(gibbs_kernel(CostMatrix(c), 0.0), ParameterError);
  CHECK_THROWS_AS(gibbs_kernel(CostMatrix(c), -1.0), ParameterError);
}

TEST_CASE("sinkhorn on the two-by-two instance") {
  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  const DiscreteDistribution mu(vec({0.2, 0.8}));
  const DiscreteDistribution nu(vec({0.9, 0.1}));
  const EotSolution s = sinkhorn(mu, nu, gibbs_kernel(CostMatrix(c), 1.0));
  CHECK(marginal_gap(s.plan, mu, nu) < 1e-9);
  CHECK(s.marginal_error < 1e-9);
  // The entropic plan is the ideal tilted by separable factors: its
  // cross-ratio equals the ideal's, exp(2 / epsilon).
  const double cross = s.plan(0, 0) * s.plan(1, 1) / (s.plan(0, 1) * s.plan(1, 0));
  CHECK(cross == doctest::Approx(std::exp(2.0)).epsilon(1e-7));
  const double lp = oracle::transport_lp_by_vertices(mu.weights(), nu.weights(), c);
  CHECK(lp == doctest::Approx(0.7));
  CHECK(transport_cost(CostMatrix(c), s.plan) >= lp - 1e-12);
}

TEST_CASE("sinkhorn symmetric instance concentrates on the diagonal") {
  Matrix c = CostMatrix::squared_euclidean_grid(4, 4).values();
  const DiscreteDistribution u = DiscreteDistribution::uniform(4);
  const EotSolution s = sinkhorn(u, u, gibbs_kernel(CostMatrix(c), 0.05));
  CHECK(s.marginal_error <= 1e-9);
  CHECK(s.plan.entries().diagonal().sum() > 0.999);
  CHECK((s.plan.entries() - s.plan.entries().transpose()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sinkhorn marginals on random instances") {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Index m = 3 + trial % 4;
    const Index n = 2 + trial % 5;
    const DiscreteDistribution mu(random_simplex(m, gen));
    const DiscreteDistribution nu(random_simplex(n, gen));
    const double eps = trial % 2 ? 1e-2 : 0.5;
    const EotSolution s = sinkhorn(mu, nu, gibbs_kernel(CostMatrix(random_cost(m, n, gen)), eps));
    CHECK(marginal_gap(s.plan, mu, nu) < 1e-9);
  }
}

TEST_CASE("sinkhorn at small epsilon approaches the LP optimum") {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 10; ++trial) {
    const DiscreteDistribution mu(random_simplex(5, gen));
    const DiscreteDistribution nu(random_simplex(5, gen));
    const CostMatrix cost(random_cost(5, 5, gen));
    const EotSolution s = sinkhorn(mu, nu, gibbs_kernel(cost, 1e-3 * cost.max()));
    const double lp = transport_cost(cost, exact_ot_small(mu, nu, cost));
    CHECK(marginal_gap(s.plan, mu, nu) < 1e-9);
    CHECK(transport_cost(cost, s.plan) <= 1.01 * lp + 1e-12);
  }
}

TEST_CASE("sinkhorn reports exhausted budgets") {
  Matrix c = CostMatrix::squared_euclidean_grid(6, 6).values();
  std::mt19937_64 gen(2);
  const DiscreteDistribution mu(random_simplex(6, gen));
  const DiscreteDistribution nu(random_simplex(6, gen));
  SinkhornOptions options;
  options.max_iter = 1;
  options.epsilon_scaling = false;
  options.tol = 1e-15;
  CHECK_THROWS_AS(sinkhorn(mu, nu, gibbs_kernel(CostMatrix(c), 1e-2), options), ConvergenceError);
  CHECK_THROWS_AS(sinkhorn(mu, DiscreteDistribution::uniform(5), gibbs_kernel(CostMatrix(c), 1.0)), DimensionError);
}

TEST_CASE("exact OT") {
  std::mt19937_64 gen(9);
  const Vector w = random_simplex(4, gen);
  Matrix c = Matrix::Constant(4, 4, 1.0);
  c.diagonal().setZero();
  const TransportPlan diagonal = exact_ot_small(DiscreteDistribution(w), DiscreteDistribution(w), CostMatrix(c));
  CHECK((diagonal.entries().diagonal() - w).cwiseAbs().maxCoeff() < 1e-12);

  const DiscreteDistribution u = DiscreteDistribution::uniform(5);
  const TransportPlan monotone = exact_ot_small(u, u, CostMatrix::squared_euclidean_grid(5, 5));
  CHECK((monotone.entries() - Matrix(Matrix::Identity(5, 5) / 5.0)).cwiseAbs().maxCoeff() < 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    const Vector a = random_simplex(3, gen);
    const Vector b = random_simplex(3, gen);
    const Matrix cost = random_cost(3, 3, gen);
    const TransportPlan plan = exact_ot_small(DiscreteDistribution(a), DiscreteDistribution(b), CostMatrix(cost));
    CHECK(transport_cost(CostMatrix(cost), plan) ==
          doctest::Approx(oracle::transport_lp_by_vertices(a, b, cost)).epsilon(1e-9));
    CHECK(marginal_gap(plan, DiscreteDistribution(a), DiscreteDistribution(b)) < 1e-12);
  }

  for (int trial = 0; trial < 10; ++trial) {
    const Vector a = random_simplex(6, gen);
    const Vector b = random_simplex(7, gen);
    const Matrix nw = oracle::north_west(a, b);
    const CostMatrix cost = CostMatrix::squared_euclidean_grid(6, 7);
    const TransportPlan plan = exact_ot_small(DiscreteDistribution(a), DiscreteDistribution(b), cost);
    CHECK(transport_cost(cost, plan) == doctest::Approx((nw.array() * cost.values().array()).sum()).epsilon(1e-9));
  }

  const DiscreteDistribution big = DiscreteDistribution::uniform(21);
  CHECK_THROWS_AS(exact_ot_small(big, big, CostMatrix::squared_euclidean_grid(21, 21)), CapacityError);
}

TEST_CASE("one-dimensional wasserstein") {
  const Vector x = vec({0.0, 1.0, 3.0});
  const Vector w = vec({0.2, 0.5, 0.3});
  CHECK(wasserstein2_1d(w, w, x, x) == doctest::Approx(0.0));
  CHECK(wasserstein2_1d(vec({1.0, 0.0}), vec({0.0, 1.0}), vec({2.0, 7.0}), vec({-1.0, 4.5})) == doctest::Approx(6.25));
  CHECK(wasserstein2_1d(DiscreteDistribution(vec({0.0, 1.0})), DiscreteDistribution(vec({1.0, 0.0})), vec({2.0, 7.0}),
                        vec({-1.0, 4.5})) == doctest::Approx(64.0));

  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 10; ++trial) {
    Vector xs(10);
    Vector ys(10);
    for (Index k = 0; k < 10; ++k) {
      xs[k] = u(gen);
      ys[k] = u(gen);
    }
    const Vector a = random_simplex(10, gen);
    const Vector b = random_simplex(10, gen);
    const CostMatrix cost = CostMatrix::squared_euclidean(xs, ys);
    const double lp = transport_cost(cost, exact_ot_small(DiscreteDistribution(a), DiscreteDistribution(b), cost));
    CHECK(wasserstein2_1d(a, b, xs, ys) == doctest::Approx(lp).epsilon(1e-9));
  }
}
