#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hfpdot/eot.hpp"
#include "hfpdot/hyperprior.hpp"
#include "hfpdot/sampler.hpp"

namespace hfpdot {

/// Entrywise frequency of pi_ij > threshold over a sample of plans.
struct FrequencyMap {
  Matrix probabilities;
  std::size_t sample_count = 0;
  double threshold = 0.0;

  /// Binomial standard error sqrt(p (1 - p) / N) per entry.
  Matrix standard_error() const;
};

/// `threshold` defaults to the average mass 1 / (m n).
FrequencyMap frequency_map(std::span<const TransportPlan> samples, std::optional<double> threshold = std::nullopt);

using Contract = std::pair<Index, Index>;

/// Contracts with pi_ij > activity_threshold, in row-major order.
std::vector<Contract> eligible_contracts(const TransportPlan& plan, double activity_threshold);

struct MarkovBound {
  double bound = 0.0;
  double empirical = 0.0;
  double empirical_se = 0.0;
  double mean_cost = 0.0;
};

/// Conditional cost c = sum_x pi(x | y0) C(x, y0) per sample; reports
/// 1 - mean(c) / w2sq and the fraction of samples with c <= w2sq.
MarkovBound markov_bound(std::span<const TransportPlan> samples, Index y_index, const CostMatrix& cost, double w2sq);

struct DiversityIndex {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Mean perplexity exp(H(pi)) over the samples.
DiversityIndex diversity_index(std::span<const TransportPlan> samples);

enum class RepairScheme { DeterministicEOT, RandomizedHFPD, NominalOT };

std::string to_string(RepairScheme scheme);
RepairScheme parse_repair_scheme(const std::string& name);

struct RepairResult {
  Vector repaired_x;
  Vector repaired_y;
  double icd = 0.0;
  double distortion = 0.0;
};

/// Fixed-support barycentric repair of the pair (x, y) through `plan`:
///   x_i <- w0 x_i + d w1 sum_j pi_ij y_j,  y_j <- w1 y_j + d w0 sum_i pi_ij x_i.
/// icd = sum_i |x_i - y_i|^2 on the repaired supports; distortion is the
/// squared 1D Wasserstein distance between uniform measures on x and on
/// the repaired x.
RepairResult repair_pair(const Vector& x_support, const Vector& y_support, const TransportPlan& plan, double w0 = 0.5,
                         double w1 = 0.5);

struct Supports {
  Vector x;
  Vector y;
};

struct DistributionalFairness {
  /// One repair per hyperprior draw.
  std::vector<RepairResult> randomized;
  /// Repair through the EOT plan between the observed marginals.
  RepairResult deterministic;
};

/// Repairs one observed pair with S independent draws from the hyperprior.
DistributionalFairness run_distributional_fairness(const HyperpriorParams& params,
                                                   const std::pair<DiscreteDistribution, DiscreteDistribution>& marginals,
                                                   const Supports& supports, std::size_t scheme_count,
                                                   const HmcConfig& sampler_config, double w0 = 0.5, double w1 = 0.5);

inline constexpr std::size_t kMarginalProposalLimit = 1000000;

/// Dirichlet proposals with base measure drawn uniformly on [0, m]
/// (resp. [0, n]) per entry, accepted when KL(mu_t || mu0) <= eta and
/// KL(nu_t || nu0) <= zeta. Throws RadiusTooSmallError when nothing is
/// accepted within kMarginalProposalLimit proposals.
std::pair<DiscreteDistribution, DiscreteDistribution> sample_empirical_marginals(const DiscreteDistribution& mu0,
                                                                                 const DiscreteDistribution& nu0,
                                                                                 double eta, double zeta, Rng& rng);
std::pair<DiscreteDistribution, DiscreteDistribution> sample_empirical_marginals(const DiscreteDistribution& mu0,
                                                                                 const DiscreteDistribution& nu0,
                                                                                 double eta, double zeta,
                                                                                 std::uint64_t seed);

using MarginalPair = std::pair<DiscreteDistribution, DiscreteDistribution>;

/// Per-scheme repair results, one per observed pair, in sequence order.
using SchemeComparison = std::map<RepairScheme, std::vector<RepairResult>>;

SchemeComparison compare_repair_schemes(std::span<const MarginalPair> sequence,
                                        const std::vector<RepairScheme>& schemes, const HyperpriorParams& params,
                                        const Supports& supports, const HmcConfig& sampler_config, double w0 = 0.5,
                                        double w1 = 0.5);

struct Spearman {
  double rho = 0.0;
  /// Two-sided p-value from the t approximation with n - 2 degrees of freedom.
  double p_value = 1.0;
};

/// Rank correlation with average ranks for ties.
Spearman spearman(std::span<const double> x, std::span<const double> y);

/// Unbiased sample variance.
double sample_variance(std::span<const double> values);

}  // namespace hfpdot
