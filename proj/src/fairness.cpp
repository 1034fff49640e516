#include "hfpdot/fairness.hpp"

#include <gsl/gsl_cdf.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hfpdot {

Matrix FrequencyMap::standard_error() const {
  const double n = static_cast<double>(sample_count);
  return (probabilities.array() * (1.0 - probabilities.array()) / n).sqrt().matrix();
}

FrequencyMap frequency_map(std::span<const TransportPlan> samples, std::optional<double> threshold) {
  if (samples.empty()) throw ParameterError("frequency_map: no samples");
  const Index rows = samples.front().rows();
  const Index cols = samples.front().cols();
  FrequencyMap map;
  map.threshold = threshold.value_or(1.0 / static_cast<double>(rows * cols));
  map.sample_count = samples.size();
  map.probabilities = Matrix::Zero(rows, cols);
  for (const auto& plan : samples) {
    if (plan.rows() != rows || plan.cols() != cols) throw DimensionError("frequency_map: samples differ in shape");
    map.probabilities.array() += (plan.entries().array() > map.threshold).cast<double>();
  }
  map.probabilities /= static_cast<double>(samples.size());
  return map;
}

std::vector<Contract> eligible_contracts(const TransportPlan& plan, double activity_threshold) {
  if (!(activity_threshold >= 0.0)) throw ParameterError("eligible_contracts: threshold must be nonnegative");
  std::vector<Contract> out;
  for (Index i = 0; i < plan.rows(); ++i) {
    for (Index j = 0; j < plan.cols(); ++j) {
      if (plan(i, j) > activity_threshold) out.emplace_back(i, j);
    }
  }
  return out;
}

MarkovBound markov_bound(std::span<const TransportPlan> samples, Index y_index, const CostMatrix& cost, double w2sq) {
  if (samples.empty()) throw ParameterError("markov_bound: no samples");
  if (!(w2sq > 0.0) || !std::isfinite(w2sq)) throw ParameterError("markov_bound: w2sq must be positive");
  std::vector<double> costs;
  costs.reserve(samples.size());
  std::size_t below = 0;
  for (const auto& plan : samples) {
    if (plan.rows() != cost.rows() || plan.cols() != cost.cols()) throw DimensionError("markov_bound: shape mismatch");
    if (y_index < 0 || y_index >= plan.cols()) throw DimensionError("markov_bound: y_index out of range");
    const double column_mass = plan.entries().col(y_index).sum();
    if (!(column_mass > 0.0)) throw ConditioningError("markov_bound: target node carries no mass");
    const double c = plan.entries().col(y_index).dot(cost.values().col(y_index)) / column_mass;
    costs.push_back(c);
    if (c <= w2sq) ++below;
  }
  const double n = static_cast<double>(samples.size());
  MarkovBound out;
  out.mean_cost = compensated_sum(costs) / n;
  out.bound = 1.0 - out.mean_cost / w2sq;
  out.empirical = static_cast<double>(below) / n;
  out.empirical_se = std::sqrt(out.empirical * (1.0 - out.empirical) / n);
  return out;
}

DiversityIndex diversity_index(std::span<const TransportPlan> samples) {
  if (samples.empty()) throw ParameterError("diversity_index: no samples");
  std::vector<double> values;
  values.reserve(samples.size());
  for (const auto& plan : samples) values.push_back(std::exp(plan_entropy(plan)));
  DiversityIndex out;
  out.value = compensated_sum(values) / static_cast<double>(values.size());
  out.standard_error = values.size() > 1 ? std::sqrt(sample_variance(values) / static_cast<double>(values.size())) : 0.0;
  return out;
}

std::string to_string(RepairScheme scheme) {
  switch (scheme) {
    case RepairScheme::DeterministicEOT:
      return "deterministic_eot";
    case RepairScheme::RandomizedHFPD:
      return "randomized_hfpd";
    case RepairScheme::NominalOT:
      return "nominal_ot";
  }
  return "unknown";
}

RepairScheme parse_repair_scheme(const std::string& name) {
  for (RepairScheme s : {RepairScheme::DeterministicEOT, RepairScheme::RandomizedHFPD, RepairScheme::NominalOT}) {
    if (to_string(s) == name) return s;
  }
  throw ValidationError("unknown repair scheme '" + name + "'");
}

RepairResult repair_pair(const Vector& x_support, const Vector& y_support, const TransportPlan& plan, double w0,
                         double w1) {
  const Index d = x_support.size();
  if (plan.rows() != plan.cols()) throw DimensionError("repair_pair: plan must be square");
  if (plan.rows() != d || y_support.size() != d) throw DimensionError("repair_pair: supports must match the plan size");
  if (!(w0 >= 0.0 && w1 >= 0.0) || std::abs(w0 + w1 - 1.0) > 1e-12) {
    throw ParameterError("repair_pair: weights must be nonnegative and sum to one");
  }
  const double scale = static_cast<double>(d);
  RepairResult out;
  out.repaired_x = w0 * x_support + scale * w1 * (plan.entries() * y_support);
  out.repaired_y = w1 * y_support + scale * w0 * (plan.entries().transpose() * x_support);
  out.icd = (out.repaired_x - out.repaired_y).squaredNorm();
  const Vector uniform = Vector::Constant(d, 1.0 / scale);
  out.distortion = wasserstein2_1d(uniform, uniform, x_support, out.repaired_x);
  return out;
}

DistributionalFairness run_distributional_fairness(const HyperpriorParams& params,
                                                   const std::pair<DiscreteDistribution, DiscreteDistribution>& marginals,
                                                   const Supports& supports, std::size_t scheme_count,
                                                   const HmcConfig& sampler_config, double w0, double w1) {
  if (scheme_count < 1) throw ParameterError("run_distributional_fairness: scheme_count must be at least 1");
  const HmcRun run = hmc_sample(HyperpriorDensity(params).target(), sampler_config, scheme_count);
  DistributionalFairness out;
  out.randomized.reserve(run.samples.size());
  for (const auto& plan : run.samples) out.randomized.push_back(repair_pair(supports.x, supports.y, plan, w0, w1));
  const EotSolution eot = sinkhorn(marginals.first, marginals.second, params.constraints.ideal);
  out.deterministic = repair_pair(supports.x, supports.y, eot.plan, w0, w1);
  return out;
}

namespace {

std::optional<DiscreteDistribution> dirichlet_proposal(Index size, Rng& rng) {
  Vector w(size);
  for (Index k = 0; k < size; ++k) {
    double alpha = 0.0;
    while (!(alpha > 0.0)) alpha = rng.uniform() * static_cast<double>(size);
    w[k] = rng.gamma(alpha);
  }
  const double total = w.sum();
  if (!(total > 0.0) || !std::isfinite(total)) return std::nullopt;
  w /= total;
  if (!(w.array() > 0.0).all()) return std::nullopt;
  return DiscreteDistribution::normalized(w);
}

}  // namespace

std::pair<DiscreteDistribution, DiscreteDistribution> sample_empirical_marginals(const DiscreteDistribution& mu0,
                                                                                 const DiscreteDistribution& nu0,
                                                                                 double eta, double zeta, Rng& rng) {
  if (!(eta >= 0.0) || !(zeta >= 0.0)) throw ParameterError("sample_empirical_marginals: radii must be nonnegative");
  for (std::size_t attempt = 0; attempt < kMarginalProposalLimit; ++attempt) {
    auto mu = dirichlet_proposal(mu0.size(), rng);
    auto nu = dirichlet_proposal(nu0.size(), rng);
    if (!mu || !nu) continue;
    if (kl_divergence(*mu, mu0) <= eta && kl_divergence(*nu, nu0) <= zeta) return {std::move(*mu), std::move(*nu)};
  }
  throw RadiusTooSmallError("sample_empirical_marginals: no proposal accepted in " +
                            std::to_string(kMarginalProposalLimit) + " draws");
}

std::pair<DiscreteDistribution, DiscreteDistribution> sample_empirical_marginals(const DiscreteDistribution& mu0,
                                                                                 const DiscreteDistribution& nu0,
                                                                                 double eta, double zeta,
                                                                                 std::uint64_t seed) {
  Rng rng(seed);
  return sample_empirical_marginals(mu0, nu0, eta, zeta, rng);
}

SchemeComparison compare_repair_schemes(std::span<const MarginalPair> sequence,
                                        const std::vector<RepairScheme>& schemes, const HyperpriorParams& params,
                                        const Supports& supports, const HmcConfig& sampler_config, double w0,
                                        double w1) {
  if (sequence.empty()) throw ParameterError("compare_repair_schemes: empty marginal sequence");
  SchemeComparison out;
  const IdealDesign& ideal = params.constraints.ideal;
  for (RepairScheme scheme : schemes) {
    if (out.count(scheme)) continue;
    std::vector<RepairResult>& results = out[scheme];
    results.reserve(sequence.size());
    switch (scheme) {
      case RepairScheme::DeterministicEOT:
        for (const auto& [mu, nu] : sequence) {
          results.push_back(repair_pair(supports.x, supports.y, sinkhorn(mu, nu, ideal).plan, w0, w1));
        }
        break;
      case RepairScheme::RandomizedHFPD: {
        const HmcRun run = hmc_sample(HyperpriorDensity(params).target(), sampler_config, sequence.size());
        for (const auto& plan : run.samples) results.push_back(repair_pair(supports.x, supports.y, plan, w0, w1));
        break;
      }
      case RepairScheme::NominalOT: {
        const TransportPlan nominal = sinkhorn(params.constraints.mu0, params.constraints.nu0, ideal).plan;
        const RepairResult fixed = repair_pair(supports.x, supports.y, nominal, w0, w1);
        results.assign(sequence.size(), fixed);
        break;
      }
    }
  }
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

Spearman spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
  if (x.size() < 3) throw ParameterError("spearman: need at least three pairs");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  Spearman out;
  if (!(sxx > 0.0 && syy > 0.0)) return out;
  out.rho = sxy / std::sqrt(sxx * syy);
  const double dof = n - 2.0;
  const double denom = 1.0 - out.rho * out.rho;
  if (!(denom > 0.0)) {
    out.p_value = 0.0;
    return out;
  }
  const double t = out.rho * std::sqrt(dof / denom);
  out.p_value = 2.0 * gsl_cdf_tdist_Q(std::abs(t), dof);
  return out;
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) throw ParameterError("sample_variance: need at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = compensated_sum(values) / n;
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return acc / (n - 1.0);
}

}  // namespace hfpdot
