#include "hfpdot/sampler.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <thread>

namespace hfpdot {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_(splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL))), engine_(key_) {}

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

double Rng::normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

double Rng::gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }

void HmcConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ParameterError("HmcConfig: step_size must be positive");
  if (leapfrog_steps < 1) throw ParameterError("HmcConfig: leapfrog_steps must be at least 1");
  if (burn_in < 0 || adaptation_steps < 0) throw ParameterError("HmcConfig: burn_in and adaptation_steps must be >= 0");
  if (adaptation_steps > burn_in) throw ParameterError("HmcConfig: adaptation_steps must not exceed burn_in");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw ParameterError("HmcConfig: target_accept must be in (0, 1)");
  if (chains < 1) throw ParameterError("HmcConfig: chains must be at least 1");
  if (thin < 1) throw ParameterError("HmcConfig: thin must be at least 1");
  if (workers < 1) throw ParameterError("HmcConfig: workers must be at least 1");
}

PhasePoint leapfrog(const Vector& position, const Vector& momentum, double step_size, int steps,
                    const LogDensityFn& log_density) {
  PhasePoint out{position, momentum, 0.0, Vector(position.size()), false};
  out.log_density = log_density(out.position, out.gradient);
  auto bad = [&] { return !std::isfinite(out.log_density) || !out.gradient.allFinite(); };
  if (bad()) {
    out.divergent = true;
    return out;
  }
  for (int s = 0; s < steps; ++s) {
    out.momentum.noalias() += 0.5 * step_size * out.gradient;
    out.position.noalias() += step_size * out.momentum;
    out.log_density = log_density(out.position, out.gradient);
    if (bad()) {
      out.divergent = true;
      return out;
    }
    out.momentum.noalias() += 0.5 * step_size * out.gradient;
  }
  return out;
}

double effective_sample_size(std::span<const double> chain) {
  const std::size_t n = chain.size();
  if (n < 4) return static_cast<double>(n);
  double mean = 0.0;
  for (double x : chain) mean += x;
  mean /= static_cast<double>(n);
  auto autocov = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) acc += (chain[t] - mean) * (chain[t + lag] - mean);
    return acc / static_cast<double>(n);
  };
  const double c0 = autocov(0);
  if (!(c0 > 0.0)) return static_cast<double>(n);
  // Sum of consecutive autocorrelation pairs while positive, forced monotone.
  double tau = -1.0;
  double previous_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
    if (!(pair > 0.0)) break;
    pair = std::min(pair, previous_pair);
    previous_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(n)));
  return static_cast<double>(n) / tau;
}

namespace {

constexpr double kDaGamma = 0.05;
constexpr double kDaT0 = 10.0;
constexpr double kDaKappa = 0.75;

struct DualAveraging {
  explicit DualAveraging(double initial_step, double target)
      : mu(std::log(10.0 * initial_step)), delta(target), log_step(std::log(initial_step)) {}

  double update(double accept_prob) {
    ++iteration;
    const double m = static_cast<double>(iteration);
    error_bar = (1.0 - 1.0 / (m + kDaT0)) * error_bar + (delta - accept_prob) / (m + kDaT0);
    log_step = mu - std::sqrt(m) / kDaGamma * error_bar;
    const double weight = std::pow(m, -kDaKappa);
    log_step_bar = weight * log_step + (1.0 - weight) * log_step_bar;
    return std::exp(log_step);
  }
  double final_step() const { return iteration > 0 ? std::exp(log_step_bar) : std::exp(log_step); }

  double mu;
  double delta;
  double log_step;
  double log_step_bar = 0.0;
  double error_bar = 0.0;
  std::int64_t iteration = 0;
};

struct ChainResult {
  std::vector<TransportPlan> samples;
  double accept_sum = 0.0;
  std::int64_t post_adaptation = 0;
  std::int64_t divergences = 0;
  double step_size = 0.0;
};

ChainResult run_chain(const PlanLogDensity& target, const HmcConfig& config, std::size_t n_samples,
                      const TransportPlan& start, std::uint64_t chain_index) {
  const Index q = target.rows * target.cols;
  const SimplexChart chart(q);
  Rng rng(config.seed, chain_index);

  const LogDensityFn density = [&](const Vector& z, Vector& gradient) {
    const Vector p = chart.to_simplex(z);
    Vector coordinate_gradient(q);
    double value;
    try {
      value = target.evaluate(p, coordinate_gradient);
    } catch (const DomainError&) {
      return -std::numeric_limits<double>::infinity();
    }
    gradient = chart.pullback(p, coordinate_gradient) + chart.log_jacobian_gradient(p);
    return value + chart.log_jacobian(z);
  };

  Vector z = chart.to_unconstrained(start.flat());
  Vector gradient(z.size());
  double log_f = density(z, gradient);
  if (!std::isfinite(log_f) || !gradient.allFinite()) {
    throw DomainError("hmc_sample: log-density is not finite at the starting plan");
  }

  DualAveraging adaptation(config.step_size, config.target_accept);
  double step = config.step_size;
  ChainResult result;
  result.samples.reserve(n_samples);
  const std::int64_t total =
      static_cast<std::int64_t>(config.burn_in) + static_cast<std::int64_t>(n_samples) * config.thin;
  Vector momentum(z.size());

  for (std::int64_t it = 0; it < total; ++it) {
    for (Index k = 0; k < momentum.size(); ++k) momentum[k] = rng.normal();
    const double h_start = -log_f + 0.5 * momentum.squaredNorm();
    PhasePoint end = leapfrog(z, momentum, step, config.leapfrog_steps, density);
    double accept_prob = 0.0;
    bool divergent = end.divergent;
    if (!divergent) {
      const double h_end = -end.log_density + 0.5 * end.momentum.squaredNorm();
      const double delta_h = h_end - h_start;
      if (!std::isfinite(delta_h) || std::abs(delta_h) > kDivergenceThreshold) {
        divergent = true;
      } else {
        accept_prob = std::min(1.0, std::exp(-delta_h));
      }
    }
    const double u = rng.uniform();
    if (!divergent && u < accept_prob) {
      z = std::move(end.position);
      log_f = end.log_density;
      gradient = std::move(end.gradient);
    }

    if (it < config.adaptation_steps) {
      step = adaptation.update(accept_prob);
      if (it + 1 == config.adaptation_steps) step = adaptation.final_step();
    } else {
      result.accept_sum += accept_prob;
      ++result.post_adaptation;
      if (divergent) ++result.divergences;
    }

    if (it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0) {
      result.samples.push_back(TransportPlan::from_flat(chart.to_simplex(z), target.rows, target.cols));
    }
  }
  result.step_size = step;
  return result;
}

}  // namespace

HmcRun hmc_sample(const PlanLogDensity& target, const HmcConfig& config, std::size_t n_samples,
                  const std::optional<TransportPlan>& start) {
  config.validate();
  if (n_samples < 1) throw ParameterError("hmc_sample: n_samples must be at least 1");
  if (target.rows < 1 || target.cols < 1 || !target.evaluate) throw ParameterError("hmc_sample: empty target");
  const TransportPlan origin = start.value_or(TransportPlan::uniform(target.rows, target.cols));
  if (origin.rows() != target.rows || origin.cols() != target.cols) {
    throw DimensionError("hmc_sample: start plan shape does not match target");
  }

  const auto chains = static_cast<std::size_t>(config.chains);
  std::vector<std::size_t> counts(chains, n_samples / chains);
  for (std::size_t c = 0; c < n_samples % chains; ++c) ++counts[c];

  std::vector<std::optional<ChainResult>> results(chains);
  std::vector<std::exception_ptr> failures(chains);
  auto work = [&](std::size_t c) {
    try {
      if (counts[c] > 0) results[c] = run_chain(target, config, counts[c], origin, c);
    } catch (...) {
      failures[c] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(config.workers), chains);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chains; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < chains; c += workers) work(c);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  HmcRun run;
  run.samples.reserve(n_samples);
  double accept_sum = 0.0;
  std::int64_t post = 0;
  double step_sum = 0.0;
  std::size_t used = 0;
  const Index q = target.rows * target.cols;
  run.diagnostics.effective_sample_size = Vector::Zero(q);
  for (auto& r : results) {
    if (!r) continue;
    accept_sum += r->accept_sum;
    post += r->post_adaptation;
    run.diagnostics.divergences += r->divergences;
    step_sum += r->step_size;
    ++used;
    if (config.compute_ess) {
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor> traces(r->samples.size(), q);
      for (std::size_t s = 0; s < r->samples.size(); ++s) traces.row(static_cast<Index>(s)) = r->samples[s].flat();
      for (Index k = 0; k < q; ++k) {
        run.diagnostics.effective_sample_size[k] +=
            effective_sample_size(std::span<const double>(traces.col(k).data(), r->samples.size()));
      }
    }
    for (auto& s : r->samples) run.samples.push_back(std::move(s));
  }
  run.diagnostics.proposals = post;
  run.diagnostics.acceptance_rate = post > 0 ? accept_sum / static_cast<double>(post) : 0.0;
  run.diagnostics.adapted_step_size = step_sum / static_cast<double>(used);
  if (!config.compute_ess) run.diagnostics.effective_sample_size.setConstant(static_cast<double>(n_samples));

  if (post > 0 && static_cast<double>(run.diagnostics.divergences) > kMaxDivergenceFraction * static_cast<double>(post)) {
    throw SamplerHealthError("hmc_sample: " + std::to_string(run.diagnostics.divergences) + " of " +
                                 std::to_string(post) + " post-adaptation proposals diverged",
                             run.diagnostics);
  }
  return run;
}

void write_samples_csv(std::ostream& out, std::span<const TransportPlan> samples,
                       const std::vector<std::string>& preamble) {
  for (const auto& line : preamble) out << "# " << line << '\n';
  char buffer[32];
  for (const auto& plan : samples) {
    const Vector flat = plan.flat();
    for (Index k = 0; k < flat.size(); ++k) {
      std::snprintf(buffer, sizeof buffer, "%.17g", flat[k]);
      if (k > 0) out << ',';
      out << buffer;
    }
    out << '\n';
  }
}

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  std::uint64_t bits;
  static_assert(sizeof(T) == sizeof bits);
  std::memcpy(&bits, &value, sizeof bits);
  unsigned char bytes[8];
  for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw ValidationError("read_samples_binary: truncated input");
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
  T value;
  std::memcpy(&value, &bits, sizeof bits);
  return value;
}

}  // namespace

void write_samples_binary(std::ostream& out, std::span<const TransportPlan> samples, std::uint64_t seed) {
  const std::uint64_t m = samples.empty() ? 0 : static_cast<std::uint64_t>(samples.front().rows());
  const std::uint64_t n = samples.empty() ? 0 : static_cast<std::uint64_t>(samples.front().cols());
  put_le<std::uint64_t>(out, m);
  put_le<std::uint64_t>(out, n);
  put_le<std::uint64_t>(out, samples.size());
  put_le<std::uint64_t>(out, seed);
  for (const auto& plan : samples) {
    if (static_cast<std::uint64_t>(plan.rows()) != m || static_cast<std::uint64_t>(plan.cols()) != n) {
      throw DimensionError("write_samples_binary: samples differ in shape");
    }
    const Vector flat = plan.flat();
    for (Index k = 0; k < flat.size(); ++k) put_le<double>(out, flat[k]);
  }
}

SampleBlock read_samples_binary(std::istream& in) {
  const auto m = get_le<std::uint64_t>(in);
  const auto n = get_le<std::uint64_t>(in);
  const auto count = get_le<std::uint64_t>(in);
  SampleBlock block;
  block.seed = get_le<std::uint64_t>(in);
  if (count > 0 && (m < 2 || n < 2 || m * n > (1ULL << 26))) throw ValidationError("read_samples_binary: bad shape");
  block.samples.reserve(count);
  Vector flat(static_cast<Index>(m * n));
  for (std::uint64_t s = 0; s < count; ++s) {
    for (Index k = 0; k < flat.size(); ++k) flat[k] = get_le<double>(in);
    block.samples.push_back(TransportPlan::from_flat(flat, static_cast<Index>(m), static_cast<Index>(n)));
  }
  return block;
}

}  // namespace hfpdot
