#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hfpdot/core.hpp"
#include "hfpdot/errors.hpp"
#include "hfpdot/target.hpp"

namespace hfpdot {

/// mt19937_64 stream keyed by (seed, stream) through splitmix64, so that
/// chains and replicate runs derive independent streams from one seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// A child stream; the parent is not advanced.
  Rng split(std::uint64_t stream) const { return Rng(key_, stream); }

  double uniform();
  double normal();
  double gamma(double shape);
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

struct HmcConfig {
  double step_size = 0.3;
  int leapfrog_steps = 6;
  int burn_in = 8000;
  int adaptation_steps = 6400;
  double target_accept = 0.6;
  std::uint64_t seed = 0;
  int chains = 1;
  int thin = 1;
  int workers = 1;
  bool compute_ess = true;

  /// Throws ParameterError on violated invariants.
  void validate() const;
};

struct HmcDiagnostics {
  /// Mean Metropolis acceptance probability after adaptation.
  double acceptance_rate = 0.0;
  double adapted_step_size = 0.0;
  /// Per flattened plan entry, summed over chains.
  Vector effective_sample_size;
  std::int64_t divergences = 0;
  std::int64_t proposals = 0;
};

class SamplerHealthError : public Error {
 public:
  SamplerHealthError(const std::string& what, HmcDiagnostics diagnostics)
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  const HmcDiagnostics& diagnostics() const noexcept { return diagnostics_; }

 private:
  HmcDiagnostics diagnostics_;
};

struct HmcRun {
  std::vector<TransportPlan> samples;
  HmcDiagnostics diagnostics;
};

/// Log-density with gradient in unconstrained coordinates.
using LogDensityFn = std::function<double(const Vector& position, Vector& gradient)>;

struct PhasePoint {
  Vector position;
  Vector momentum;
  double log_density = 0.0;
  Vector gradient;
  bool divergent = false;
};

/// Velocity-Verlet integration of H(q, p) = -log f(q) + |p|^2 / 2.
/// Stops early and flags a divergence on a non-finite density or gradient.
PhasePoint leapfrog(const Vector& position, const Vector& momentum, double step_size, int steps,
                    const LogDensityFn& log_density);

/// Divergence threshold on |H_end - H_start|.
inline constexpr double kDivergenceThreshold = 1000.0;
/// Fraction of post-adaptation proposals that may diverge.
inline constexpr double kMaxDivergenceFraction = 0.1;

/// Draws n_samples plans from exp(log f) using HMC in chart coordinates.
/// Chains run on up to config.workers threads and are concatenated in chain
/// order. `start` defaults to the uniform plan.
HmcRun hmc_sample(const PlanLogDensity& target, const HmcConfig& config, std::size_t n_samples,
                  const std::optional<TransportPlan>& start = std::nullopt);

/// Geyer initial-positive-sequence ESS of a scalar chain.
double effective_sample_size(std::span<const double> chain);

/// One flattened row-major plan per line; `preamble` lines are written as
/// '#' comments.
void write_samples_csv(std::ostream& out, std::span<const TransportPlan> samples,
                       const std::vector<std::string>& preamble = {});
/// Header m, n, count, seed as little-endian u64, then the entries as
/// little-endian f64.
void write_samples_binary(std::ostream& out, std::span<const TransportPlan> samples, std::uint64_t seed);

struct SampleBlock {
  std::uint64_t seed = 0;
  std::vector<TransportPlan> samples;
};
SampleBlock read_samples_binary(std::istream& in);

}  // namespace hfpdot
