#pragma once

#include <iosfwd>
#include <string_view>
#include <vector>

#include "attnlreg/cli/run_config.hpp"

namespace alr::cli {

struct PreparedData {
  data::RawSeries series;
  std::vector<data::Coupling> graph;  // synthetic ground truth, empty for CSV input
  data::NormStats stats;              // fitted on the train split
  std::vector<data::WindowPair> train;
  std::vector<data::WindowPair> val;
  std::vector<data::WindowPair> test;
};

/// Loads or generates the series, splits it chronologically, z-scores with
/// train statistics and cuts stride-1 windows. Fills config.model.variables.
PreparedData prepare_data(RunConfig& config);

/// Runs one of synth | train | eval | ablate | sparsity | atomicity.
/// Returns the process exit status; failures are reported on `err`.
int execute(std::string_view command, RunConfig config, std::ostream& log, std::ostream& err);

std::vector<std::string_view> command_names();

// Artifact file names under RunConfig::out.
inline constexpr const char* kCheckpointFile = "model.atlr";
inline constexpr const char* kMetricsFile = "metrics.json";
inline constexpr const char* kSyntheticCsv = "synthetic.csv";
inline constexpr const char* kSyntheticGraph = "synthetic_graph.json";
inline constexpr const char* kAtomicityFile = "atomicity.json";
std::string grid_file_stem(std::size_t layer, const analysis::HorizonPosition& position);
std::string sparsity_file(std::size_t layer);

}  // namespace alr::cli
