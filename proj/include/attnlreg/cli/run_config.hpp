#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "attnlreg/analysis/analysis.hpp"
#include "attnlreg/data/series.hpp"
#include "attnlreg/model/config.hpp"
#include "attnlreg/objective/objective.hpp"
#include "attnlreg/objective/trainer.hpp"

namespace alr::cli {

inline constexpr int kArtifactFormatVersion = 1;
inline constexpr const char* kSeedEnvVar = "ATLR_SEED";

struct DataSource {
  std::optional<std::filesystem::path> csv;
  // Raw synthetic section; a missing seed follows the run seed.
  std::optional<nlohmann::json> synthetic;
  std::string dataset;  // preset name used for splits/horizons, may be empty
};

struct OptimizerConfig {
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::size_t max_steps_per_epoch = 0;
};

struct AnalysisConfig {
  std::optional<std::size_t> layer;  // default depends on the command
  analysis::HorizonPosition horizon;
  std::size_t samples = analysis::kDefaultAblationSamples;
  double threshold = analysis::kDefaultSparsityThreshold;
  analysis::TokenIndexSpace index_space = analysis::TokenIndexSpace::within_variable;
  std::size_t threads = 1;
};

/// A whole experiment described by one JSON document.
struct RunConfig {
  DataSource data;
  data::SplitSpec split;
  model::ModelConfig model;
  nlohmann::json regularization;  // {"alpha_1","gamma"} or {"alphas"}; resolved once N/L are known
  objective::PenaltyTarget penalty = objective::PenaltyTarget::raw_scores;
  OptimizerConfig optimizer;
  AnalysisConfig analysis;
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";

  objective::RegSchedule schedule() const;
  std::optional<data::SyntheticSpec> synthetic_spec() const;
  objective::TrainSettings train_settings() const;
  // Canonical JSON of every resolved field; hashed into artifacts.
  nlohmann::json to_json() const;
  std::string hash() const;
};

/// Command-line values that take precedence over the document.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::size_t> layer;
  std::optional<std::string> horizon_position;
  std::optional<std::size_t> samples;
  std::optional<double> threshold;
  std::optional<std::size_t> threads;
};

/// Relative paths in the document resolve against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Precedence for the seed: flag, then the ATLR_SEED environment variable,
/// then the document.
void apply_overrides(RunConfig& config, const Overrides& overrides);

std::string fnv1a_hex(const std::string& text);

}  // namespace alr::cli
