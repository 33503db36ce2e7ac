#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "attnlreg/numerics/array.hpp"

namespace alr::data {

/// A full multivariate series, time along rows and variables along columns.
struct RawSeries {
  Array<float> values;  // (T_total x N)
  std::vector<std::string> variable_names;
  std::vector<std::string> timestamps;  // empty or one per row

  std::size_t length() const { return values.dim(0); }
  std::size_t variables() const { return values.dim(1); }

  // Rows [begin, begin + count) as a new series.
  RawSeries slice(std::size_t begin, std::size_t count) const;
};

/// Split lengths in time steps, either explicit or derived from ratios.
struct SplitSpec {
  std::optional<std::array<std::size_t, 3>> lengths;
  std::array<double, 3> ratios{0.7, 0.1, 0.2};

  static SplitSpec from_lengths(std::size_t train, std::size_t val, std::size_t test);
  static SplitSpec from_ratios(double train, double val, double test);

  // Resolved (train, val, test) lengths for a series of `total` steps.
  std::array<std::size_t, 3> resolve(std::size_t total) const;
};

/// Published split sizes for the standard benchmarks; nullopt for unknown names.
std::optional<SplitSpec> split_preset(std::string_view dataset);

/// Standard forecast horizons for a dataset family.
std::vector<std::size_t> horizon_preset(std::string_view dataset);

struct Splits {
  RawSeries train;
  RawSeries val;
  RawSeries test;
  std::size_t val_offset = 0;
  std::size_t test_offset = 0;
};

Splits chronological_split(const RawSeries& series, const SplitSpec& spec);

struct NormStats {
  std::vector<float> mean;
  std::vector<float> std;
};

inline constexpr float kStdFloor = 1e-8F;

NormStats fit_norm_stats(const RawSeries& series);
/// Z-scores every variable. Stats are fitted on `series` unless supplied.
std::pair<RawSeries, NormStats> normalize(const RawSeries& series, const std::optional<NormStats>& stats = {});
RawSeries denormalize(const RawSeries& series, const NormStats& stats);

struct WindowPair {
  Array<float> x;  // (T x N) lookback
  Array<float> y;  // (S x N) target
  std::size_t origin_index = 0;
};

std::vector<WindowPair> make_windows(const RawSeries& series, std::size_t lookback, std::size_t horizon);
inline std::size_t window_count(std::size_t length, std::size_t lookback, std::size_t horizon) {
  return length >= lookback + horizon ? length - lookback - horizon + 1 : 0;
}

RawSeries load_csv(const std::filesystem::path& path);
void write_csv(const RawSeries& series, const std::filesystem::path& path);

struct Coupling {
  std::size_t target = 0;
  std::size_t source = 0;
  std::size_t lag = 1;
  double weight = 0.0;
};

struct SyntheticSpec {
  std::size_t variables = 1;
  std::size_t length = 1;
  std::vector<Coupling> couplings;
  std::vector<double> periods;  // per variable; 0 disables the sine term
  std::vector<double> offsets;  // per variable constant level; empty means 0
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  std::size_t warmup = 0;  // generated then discarded

  void validate() const;
};

struct SyntheticData {
  RawSeries series;
  std::vector<Coupling> graph;
};

/// x_t[j] = offset_j + sum(weight * x_{t-lag}[source]) + sin(2 pi t / period_j) + noise.
/// The sine phase uses the output index, so after warm-up row t carries sin(2 pi t / p).
SyntheticData synth_generate(const SyntheticSpec& spec);

/// Every variable driven by exactly one other variable through a lagged
/// coupling of positive weight (a random derangement), plus a distinct per-variable period
/// drawn from 8, 10, 12, ...
SyntheticSpec planted_coupling_spec(std::size_t variables, std::size_t length, std::size_t min_lag,
                                    std::size_t max_lag, double noise_std, std::uint64_t seed);

}  // namespace alr::data
