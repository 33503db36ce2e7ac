#include "attnlreg/data/series.hpp"

#include <cmath>
#include <map>
#include <string>

namespace alr::data {

RawSeries RawSeries::slice(std::size_t begin, std::size_t count) const {
  if (count == 0 || begin + count > length()) {
    throw InvalidArgument("slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") outside series of length " + std::to_string(length()));
  }
  const std::size_t n = variables();
  std::vector<float> rows(values.storage().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          values.storage().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  RawSeries out{Array<float>({count, n}, std::move(rows)), variable_names, {}};
  if (!timestamps.empty()) {
    out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                          timestamps.begin() + static_cast<std::ptrdiff_t>(begin + count));
  }
  return out;
}

SplitSpec SplitSpec::from_lengths(std::size_t train, std::size_t val, std::size_t test) {
  if (train == 0 || val == 0 || test == 0) throw InvalidArgument("split lengths must be positive");
  SplitSpec s;
  s.lengths = std::array<std::size_t, 3>{train, val, test};
  return s;
}

SplitSpec SplitSpec::from_ratios(double train, double val, double test) {
  if (!(train > 0 && val > 0 && test > 0) || train + val + test > 1.0 + 1e-9) {
    throw InvalidArgument("split ratios must be positive and sum to at most 1");
  }
  SplitSpec s;
  s.ratios = {train, val, test};
  return s;
}

std::array<std::size_t, 3> SplitSpec::resolve(std::size_t total) const {
  std::array<std::size_t, 3> out{};
  if (lengths) {
    out = *lengths;
  } else {
    const double sum = ratios[0] + ratios[1] + ratios[2];
    out[0] = static_cast<std::size_t>(static_cast<double>(total) * ratios[0]);
    out[2] = static_cast<std::size_t>(static_cast<double>(total) * ratios[2]);
    // Validation takes the remainder when the ratios cover the whole series.
    out[1] = std::abs(sum - 1.0) < 1e-9 ? total - out[0] - out[2]
                                         : static_cast<std::size_t>(static_cast<double>(total) * ratios[1]);
  }
  if (out[0] == 0 || out[1] == 0 || out[2] == 0 || out[0] + out[1] + out[2] > total) {
    throw InvalidArgument("split (" + std::to_string(out[0]) + ", " + std::to_string(out[1]) + ", " +
                          std::to_string(out[2]) + ") does not fit a series of length " + std::to_string(total));
  }
  return out;
}

std::optional<SplitSpec> split_preset(std::string_view dataset) {
  static const std::map<std::string, std::array<std::size_t, 3>, std::less<>> presets{
      {"ETTh2", {8545, 2881, 2881}},     {"Weather", {36792, 5271, 10540}},
      {"ECL", {18317, 2633, 5261}},      {"Traffic", {12185, 1757, 3509}},
      {"Solar-Energy", {36601, 5161, 10417}}, {"PEMS03", {15617, 5135, 5135}},
  };
  const auto it = presets.find(dataset);
  if (it == presets.end()) return std::nullopt;
  return SplitSpec::from_lengths(it->second[0], it->second[1], it->second[2]);
}

std::vector<std::size_t> horizon_preset(std::string_view dataset) {
  if (dataset == "PEMS03") return {12, 24, 48, 96};
  return {96, 192, 336, 720};
}

Splits chronological_split(const RawSeries& series, const SplitSpec& spec) {
  const auto [train, val, test] = spec.resolve(series.length());
  Splits out{series.slice(0, train), series.slice(train, val), series.slice(train + val, test), train, train + val};
  return out;
}

NormStats fit_norm_stats(const RawSeries& series) {
  const std::size_t rows = series.length(), n = series.variables();
  NormStats stats{std::vector<float>(n), std::vector<float>(n)};
  for (std::size_t j = 0; j < n; ++j) {
    double mu = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mu += series.values.at(r, j);
    mu /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = series.values.at(r, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(rows);
    stats.mean[j] = static_cast<float>(mu);
    stats.std[j] = std::max(static_cast<float>(std::sqrt(var)), kStdFloor);
  }
  return stats;
}

std::pair<RawSeries, NormStats> normalize(const RawSeries& series, const std::optional<NormStats>& stats) {
  NormStats s = stats ? *stats : fit_norm_stats(series);
  if (s.mean.size() != series.variables() || s.std.size() != series.variables()) {
    throw InvalidArgument("normalization stats cover " + std::to_string(s.mean.size()) + " variables, series has " +
                          std::to_string(series.variables()));
  }
  RawSeries out = series;
  const std::size_t n = series.variables();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const std::size_t j = i % n;
    out.values[i] = (out.values[i] - s.mean[j]) / std::max(s.std[j], kStdFloor);
  }
  return {std::move(out), std::move(s)};
}

RawSeries denormalize(const RawSeries& series, const NormStats& stats) {
  RawSeries out = series;
  const std::size_t n = series.variables();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const std::size_t j = i % n;
    out.values[i] = out.values[i] * std::max(stats.std[j], kStdFloor) + stats.mean[j];
  }
  return out;
}

std::vector<WindowPair> make_windows(const RawSeries& series, std::size_t lookback, std::size_t horizon) {
  if (lookback == 0 || horizon == 0) throw InvalidArgument("lookback and horizon must be positive");
  const std::size_t count = window_count(series.length(), lookback, horizon);
  if (count == 0) {
    throw InvalidArgument("series of length " + std::to_string(series.length()) + " is too short for lookback " +
                          std::to_string(lookback) + " + horizon " + std::to_string(horizon));
  }
  const std::size_t n = series.variables();
  const auto& v = series.values.storage();
  std::vector<WindowPair> windows;
  windows.reserve(count);
  for (std::size_t origin = 0; origin < count; ++origin) {
    const auto x0 = v.begin() + static_cast<std::ptrdiff_t>(origin * n);
    const auto y0 = x0 + static_cast<std::ptrdiff_t>(lookback * n);
    const auto y1 = y0 + static_cast<std::ptrdiff_t>(horizon * n);
    windows.push_back(WindowPair{Array<float>({lookback, n}, std::vector<float>(x0, y0)),
                                 Array<float>({horizon, n}, std::vector<float>(y0, y1)), origin});
  }
  return windows;
}

}  // namespace alr::data
