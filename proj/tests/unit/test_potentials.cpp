#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hfpdot/potentials.hpp"
#include "oracles.hpp"

using namespace hfpdot;

namespace {

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

HmcConfig quick(std::uint64_t seed) {
  HmcConfig c;
  c.burn_in = 1000;
  c.adaptation_steps = 800;
  c.seed = seed;
  return c;
}

Matrix2 random_spd(std::mt19937_64& gen) {
  std::normal_distribution<double> normal;
  Matrix2 a;
  a << normal(gen), normal(gen), normal(gen), normal(gen);
  return a * a.transpose() + 0.1 * Matrix2::Identity();
}

}  // namespace

TEST_CASE("bfgs update") {
  const BfgsResult fixed = bfgs_update(Matrix2::Identity(), Pair(1, 0), Pair(1, 0));
  CHECK_FALSE(fixed.skipped);
  CHECK((fixed.inverse_hessian - Matrix2::Identity()).cwiseAbs().maxCoeff() < 1e-15);

  std::mt19937_64 gen(13);
  std::normal_distribution<double> normal;
  int checked = 0;
  while (checked < 100) {
    const Matrix2 h = random_spd(gen);
    const Pair s(normal(gen), normal(gen));
    const Pair n(normal(gen), normal(gen));
    const BfgsResult r = bfgs_update(h, s, n);
    CHECK((r.inverse_hessian - r.inverse_hessian.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    if (n.dot(s) <= 1e-3) continue;
    CHECK(Eigen::LLT<Matrix2>(r.inverse_hessian).info() == Eigen::Success);
    // Secant condition H' n = s.
    CHECK((r.inverse_hessian * n - s).norm() < 1e-9 * (1.0 + s.norm()));
    ++checked;
  }

  const BfgsResult orthogonal = bfgs_update(Matrix2::Identity(), Pair(1, 0), Pair(0, 1));
  CHECK(orthogonal.skipped);
  CHECK(orthogonal.inverse_hessian == Matrix2::Identity());
  CHECK(bfgs_update(Matrix2::Identity(), Pair(1, 0), Pair(-1, 0)).skipped);
}

TEST_CASE("quadratic step size") {
  std::mt19937_64 gen(29);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix2 a = random_spd(gen);
    const Pair x(normal(gen), normal(gen));
    const Pair d(normal(gen), normal(gen));
    const Pair g = a * x;
    const Pair g_at_d = a * (x + d);
    // Minimizer of t -> f(x + t d) for f = x^T A x / 2.
    const double exact = -d.dot(g) / d.dot(a * d);
    const StepSize step = quadratic_step_size(d, g, g_at_d, 1e6);
    if (exact <= 0.0) {
      CHECK(step.fallback);
      continue;
    }
    CHECK_FALSE(step.fallback);
    CHECK(step.value == doctest::Approx(exact).epsilon(1e-10));
  }

  const Pair g(0.7, -1.3);
  const StepSize newton = quadratic_step_size(-g, g, Pair::Zero(), 1.0);
  CHECK(newton.value == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_FALSE(newton.fallback);

  const StepSize flat = quadratic_step_size(Pair(1, 0), Pair(-1, 0), Pair(-1, 1e-3), 1.0);
  CHECK(flat.fallback);
  CHECK(flat.value == 1.0);
  const StepSize long_step = quadratic_step_size(Pair(1, 0), Pair(-1, 0), Pair(-0.9, 0), 1.0);
  CHECK(long_step.clamped);
  CHECK(long_step.value == 1.0);
  CHECK_THROWS_AS(quadratic_step_size(Pair::Zero(), g, g, 1.0), ParameterError);
}

TEST_CASE("newton decrement") {
  CHECK(newton_decrement(Pair::Zero(), Matrix2::Identity()) == 0.0);
  CHECK(newton_decrement(Pair(1, 0), Matrix2::Identity()) == 1.0);
  std::mt19937_64 gen(31);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix2 m = random_spd(gen);
    const Pair g(normal(gen), normal(gen));
    double expected = 0.0;
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) expected += g[i] * m(i, j) * g[j];
    }
    CHECK(std::abs(newton_decrement(g, m) - expected) < 1e-12 * (1.0 + expected));
  }
  Matrix2 indefinite;
  indefinite << 1, 0, 0, -1;
  CHECK_THROWS_AS(newton_decrement(Pair(1, 1), indefinite), DefinitenessError);
  Matrix2 skew;
  skew << 1, 0.5, 0, 1;
  CHECK_THROWS_AS(newton_decrement(Pair(1, 1), skew), DefinitenessError);
}

TEST_CASE("dual gradient estimate") {
  const KnowledgeConstraints k = two_by_two(0.05, 0.05);
  CHECK_THROWS_AS(dual_gradient_estimate(Pair(1, 1), k, quick(1), 99), ParameterError);

  // Near the concentration limit E[R] is about (m - 1) / (2 lambda).
  const GradientEstimate tight = dual_gradient_estimate(Pair(100, 100), k, quick(2), 2000);
  CHECK((tight.gradient - k.radii()).cwiseAbs().maxCoeff() < 0.01);
  CHECK((tight.mean_moment.array() >= 0.0).all());

  const GradientEstimate loose = dual_gradient_estimate(Pair(0, 0), two_by_two(10, 10), quick(3), 2000);
  CHECK(loose.gradient[0] > 0.0);
  CHECK(loose.gradient[1] > 0.0);

  // theta - E[R] is the gradient of lambda^T theta + log N(lambda).
  const oracle::Dual2x2 dual(oracle::Instance2x2{});
  const double h = 1e-4;
  const auto objective = [&](double l1, double l2) { return -dual.dual({l1, l2}); };
  const Pair fd((objective(1 + h, 1) - objective(1 - h, 1)) / (2 * h),
                (objective(1, 1 + h) - objective(1, 1 - h)) / (2 * h));
  HmcConfig config = quick(4);
  config.chains = 4;
  const GradientEstimate est = dual_gradient_estimate(Pair(1, 1), k, config, 8000);
  for (int c = 0; c < 2; ++c) {
    CHECK_MESSAGE(std::abs(est.gradient[c] - fd[c]) < 3.0 * est.standard_error[c],
                  "component " << c << " estimate " << est.gradient[c] << " fd " << fd[c] << " se "
                               << est.standard_error[c]);
  }

  // The covariance of R is the Hessian of log N.
  const double k2 = 1e-3;
  const auto log_n = [&](double l1, double l2) { return -dual.dual({l1, l2}) - l1 * 0.05 - l2 * 0.05; };
  Matrix2 hessian;
  hessian(0, 0) = (log_n(1 + k2, 1) - 2 * log_n(1, 1) + log_n(1 - k2, 1)) / (k2 * k2);
  hessian(1, 1) = (log_n(1, 1 + k2) - 2 * log_n(1, 1) + log_n(1, 1 - k2)) / (k2 * k2);
  hessian(0, 1) = hessian(1, 0) =
      (log_n(1 + k2, 1 + k2) - log_n(1 + k2, 1 - k2) - log_n(1 - k2, 1 + k2) + log_n(1 - k2, 1 - k2)) / (4 * k2 * k2);
  CHECK((est.moment_covariance - est.moment_covariance.transpose()).norm() == 0.0);
  CHECK_MESSAGE((est.moment_covariance - hessian).cwiseAbs().maxCoeff() < 0.15 * hessian.cwiseAbs().maxCoeff(),
                "sample covariance\n" << est.moment_covariance << "\nquadrature Hessian\n" << hessian);
}

TEST_CASE("solver options") {
  SolverOptions o;
  CHECK_NOTHROW(o.validate());
  o.tol = 0.0;
  CHECK_THROWS_AS(o.validate(), ParameterError);
  o = SolverOptions{};
  o.n_samp = 50;
  CHECK_THROWS_AS(o.validate(), ParameterError);
  o = SolverOptions{};
  o.initial_lambda = Pair(-1, 0);
  CHECK_THROWS_AS(o.validate(), ParameterError);
}

TEST_CASE("loose radii drive the potentials to zero") {
  SolverOptions o;
  o.n_samp = 500;
  o.max_outer = 10;
  const SolveResult r = solve_potentials(two_by_two(10, 10), quick(5), o);
  CHECK(r.report.converged);
  CHECK(r.params.potentials.cwiseAbs().maxCoeff() < 0.1);
  CHECK(r.report.trajectory.back().newton_decrement <= o.tol);
}

TEST_CASE("solver trajectory stays feasible") {
  SolverOptions o;
  o.n_samp = 500;
  o.max_outer = 3;
  o.tol = 1e-12;
  const SolveResult r = solve_potentials(two_by_two(0.05, 0.05), quick(6), o);
  CHECK_FALSE(r.report.converged);
  REQUIRE(r.report.trajectory.size() == 4);
  CHECK(r.report.diagnostics.size() == r.report.trajectory.size());
  for (const DualState& s : r.report.trajectory) {
    CHECK((s.lambda.array() >= 0.0).all());
    CHECK((s.inverse_hessian - s.inverse_hessian.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s.newton_decrement >= 0.0);
  }
  CHECK(r.report.trajectory.back().lambda == r.params.potentials);

  const nlohmann::json plain = to_json(r.report);
  CHECK_FALSE(plain.contains("wall_seconds"));
  CHECK(plain["trajectory"].size() == 4);
  CHECK(to_json(r.report, true).contains("wall_seconds"));

  const SolveResult again = solve_potentials(two_by_two(0.05, 0.05), quick(6), o);
  CHECK(to_json(again.report).dump() == plain.dump());
}
