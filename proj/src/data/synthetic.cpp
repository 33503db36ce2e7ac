#include <cmath>
#include <numbers>
#include <string>

#include "attnlreg/data/series.hpp"
#include "attnlreg/numerics/rng.hpp"

namespace alr::data {

void SyntheticSpec::validate() const {
  if (variables == 0 || length == 0) throw InvalidArgument("synthetic spec needs variables >= 1 and length >= 1");
  if (!periods.empty() && periods.size() != variables) {
    throw InvalidArgument("synthetic periods: expected " + std::to_string(variables) + " entries");
  }
  if (!offsets.empty() && offsets.size() != variables) {
    throw InvalidArgument("synthetic offsets: expected " + std::to_string(variables) + " entries");
  }
  for (double p : periods) {
    if (p < 0 || !std::isfinite(p)) throw InvalidArgument("synthetic periods must be finite and >= 0");
  }
  if (noise_std < 0 || !std::isfinite(noise_std)) throw InvalidArgument("synthetic noise_std must be >= 0");
  for (const Coupling& c : couplings) {
    if (c.target >= variables || c.source >= variables) throw InvalidArgument("coupling variable index out of range");
    if (c.lag < 1) throw InvalidArgument("coupling lag must be >= 1");
    if (!std::isfinite(c.weight)) throw InvalidArgument("coupling weight must be finite");
  }
}

SyntheticData synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.variables;
  const std::size_t total = spec.warmup + spec.length;
  Rng rng(spec.seed);
  std::vector<double> x(total * n, 0.0);
  const auto at = [&](std::size_t step, std::size_t var) -> double& { return x[step * n + var]; };

  for (std::size_t step = 0; step < total; ++step) {
    // Signed time so that output row 0 has phase 0.
    const double t = static_cast<double>(step) - static_cast<double>(spec.warmup);
    for (std::size_t j = 0; j < n; ++j) {
      double v = spec.offsets.empty() ? 0.0 : spec.offsets[j];
      if (!spec.periods.empty() && spec.periods[j] > 0) v += std::sin(2.0 * std::numbers::pi * t / spec.periods[j]);
      if (spec.noise_std > 0) v += spec.noise_std * rng.normal();
      at(step, j) = v;
    }
    for (const Coupling& c : spec.couplings) {
      if (step >= c.lag) at(step, c.target) += c.weight * at(step - c.lag, c.source);
    }
  }
  // Couplings read earlier steps only, so adding them after the per-step
  // terms is the same recurrence as the closed form.

  std::vector<float> out(spec.length * n);
  for (std::size_t r = 0; r < spec.length; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<float>(at(r + spec.warmup, j));
  }
  SyntheticData data;
  data.series.values = Array<float>({spec.length, n}, std::move(out));
  for (std::size_t j = 0; j < n; ++j) data.series.variable_names.push_back("v" + std::to_string(j));
  data.graph = spec.couplings;
  return data;
}

SyntheticSpec planted_coupling_spec(std::size_t variables, std::size_t length, std::size_t min_lag,
                                    std::size_t max_lag, double noise_std, std::uint64_t seed) {
  if (variables < 2) throw InvalidArgument("planted couplings need at least two variables");
  if (min_lag < 1 || max_lag < min_lag) throw InvalidArgument("planted coupling lags must satisfy 1 <= min <= max");
  Rng rng(seed ^ 0x5EEDC0DEULL);
  // Random derangement: a shuffled cycle, so nobody drives itself.
  std::vector<std::size_t> order(variables);
  for (std::size_t i = 0; i < variables; ++i) order[i] = i;
  for (std::size_t i = variables - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  SyntheticSpec spec;
  spec.variables = variables;
  spec.length = length;
  spec.noise_std = noise_std;
  spec.seed = seed;
  spec.warmup = 4 * max_lag + 64;
  for (std::size_t i = 0; i < variables; ++i) {
    const std::size_t target = order[(i + 1) % variables];
    const std::size_t source = order[i];
    const std::size_t lag = min_lag + rng.below(max_lag - min_lag + 1);
    const double magnitude = rng.uniform(0.7, 0.9);
    spec.couplings.push_back({target, source, lag, magnitude});
  }
  // Distinct periods 8, 10, 12, ... in random order keep every variable identifiable.
  spec.periods.resize(variables);
  for (std::size_t i = 0; i < variables; ++i) spec.periods[i] = 8.0 + 2.0 * static_cast<double>(i);
  for (std::size_t i = variables - 1; i > 0; --i) std::swap(spec.periods[i], spec.periods[rng.below(i + 1)]);
  return spec;
}

}  // namespace alr::data
