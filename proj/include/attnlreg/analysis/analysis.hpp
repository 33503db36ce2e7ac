#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "attnlreg/data/series.hpp"
#include "attnlreg/model/transformer.hpp"

namespace alr::analysis {

/// Which forecast step an ablation grid scores: the first, the last, or a
/// 0-based index into the horizon.
struct HorizonPosition {
  enum class Kind { first, last, index };
  Kind kind = Kind::last;
  std::size_t index = 0;

  static HorizonPosition parse(std::string_view text);
  std::size_t resolve(std::size_t horizon) const;
  std::string to_string() const;
};

/// Patch grids can be indexed within one variable's patches (every
/// variable's map edited together) or over all N*P tokens (block diagonal,
/// each block edited for its own variable; cross-variable cells are 0).
enum class TokenIndexSpace { within_variable, global };

inline constexpr std::size_t kDefaultAblationSamples = 100;
inline constexpr double kDefaultSparsityThreshold = 1e-5;
inline constexpr double kDefaultTieEpsilon = 1e-6;

struct AblationOptions {
  std::size_t layer = 0;
  HorizonPosition horizon;
  std::size_t sample_count = kDefaultAblationSamples;
  TokenIndexSpace index_space = TokenIndexSpace::within_variable;
  std::size_t threads = 1;
  std::size_t batch_size = 128;
};

struct AblationGrid {
  std::size_t tokens = 0;
  std::vector<double> deltas;  // row-major tokens x tokens; deltas[p*tokens+q]
  HorizonPosition horizon;
  std::size_t horizon_step = 0;
  std::size_t sample_count = 0;
  std::size_t layer = 0;
  double baseline_error = 0.0;
  TokenIndexSpace index_space = TokenIndexSpace::within_variable;

  double at(std::size_t p, std::size_t q) const { return deltas[p * tokens + q]; }
};

/// For every map entry (p, q) of `layer`, the change in squared error at the
/// chosen horizon step (averaged over variables and the first
/// `sample_count` windows) when that normalized entry is zeroed.
template <typename T>
AblationGrid dependency_ablation(const model::ModelConfig& config, const model::ModelParams<T>& params,
                                 std::span<const data::WindowPair> windows, const AblationOptions& options);

/// Per-window squared error at one horizon step, averaged over variables.
template <typename T>
std::vector<double> horizon_errors(const model::ModelConfig& config, const model::ModelParams<T>& params,
                                   std::span<const data::WindowPair> windows, std::size_t step,
                                   const model::ForwardOptions& options = {}, std::size_t batch_size = 128);

struct SparsityReport {
  std::size_t layer = 0;
  double threshold = kDefaultSparsityThreshold;
  double sparsity = 0.0;
  double mse = 0.0;
  std::size_t windows = 0;
};

/// Fraction of entries of a (maps x n x n) stack strictly below `threshold`.
double map_sparsity(const Array<float>& maps, double threshold);

template <typename T>
SparsityReport sparsity(const model::ModelConfig& config, const model::ModelParams<T>& params,
                        std::span<const data::WindowPair> windows, std::size_t layer = 0,
                        double threshold = kDefaultSparsityThreshold, std::size_t batch_size = 128);

/// Share of grid cells whose ablation lowers the error by more than tie_epsilon.
double redundancy_proportion(const AblationGrid& grid, double tie_epsilon = kDefaultTieEpsilon);
/// Share of grid cells whose ablation raises the error by more than tie_epsilon.
double beneficial_proportion(const AblationGrid& grid, double tie_epsilon = kDefaultTieEpsilon);

struct AtomicityEntry {
  std::size_t token = 0;
  double needed_fraction = 0.0;
  bool atomic = false;
  double baseline_mse = 0.0;
};

struct AtomicityReport {
  std::vector<AtomicityEntry> entries;
  std::size_t dimensions = 0;
  std::size_t windows = 0;
};

/// Zeroes each final-token dimension in turn and marks it needed for token i
/// when variable i's forecast MSE rises. Token i is variable i (for patch
/// models, entry i covers variable i's patch tokens).
template <typename T>
AtomicityReport atomicity_score(const model::ModelConfig& config, const model::ModelParams<T>& params,
                                std::span<const data::WindowPair> windows, std::size_t batch_size = 128);

nlohmann::json to_json(const AblationGrid& grid);
nlohmann::json to_json(const SparsityReport& report);
nlohmann::json to_json(const AtomicityReport& report);

void write_grid_csv(const AblationGrid& grid, const std::filesystem::path& path);

}  // namespace alr::analysis
