#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "attnlreg/cli/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Attention-regularized time series transformer toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  alr::cli::Overrides overrides;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t layer = 0;
  std::size_t samples = 0;
  std::size_t threads = 1;
  double threshold = 0.0;
  std::string horizon;

  app.add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out, "Output directory");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides ATLR_SEED and the config)");
  auto* layer_opt = app.add_option("--layer", layer, "Encoder layer to analyse (0-based)");
  auto* horizon_opt = app.add_option("--horizon-position", horizon, "first | last | INDEX (0-based)");
  auto* samples_opt = app.add_option("--samples", samples, "Test windows used by ablate");
  auto* threshold_opt = app.add_option("--threshold", threshold, "Sparsity threshold");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads for ablate");

  for (const auto name : alr::cli::command_names()) {
    app.add_subcommand(std::string(name))->fallthrough();
  }
  app.get_subcommand("synth")->description("Write a synthetic CSV and its ground-truth coupling graph");
  app.get_subcommand("train")->description("Train and write checkpoint, sidecar and metrics.json");
  app.get_subcommand("eval")->description("Add test MSE/MAE to metrics.json");
  app.get_subcommand("ablate")->description("Write a dependency ablation grid");
  app.get_subcommand("sparsity")->description("Write an attention sparsity report");
  app.get_subcommand("atomicity")->description("Write an atomicity report");

  CLI11_PARSE(app, argc, argv);

  if (*out_opt) overrides.out = out;
  if (*seed_opt) overrides.seed = seed;
  if (*layer_opt) overrides.layer = layer;
  if (*horizon_opt) overrides.horizon_position = horizon;
  if (*samples_opt) overrides.samples = samples;
  if (*threshold_opt) overrides.threshold = threshold;
  if (*threads_opt) overrides.threads = threads;

  alr::cli::RunConfig config;
  try {
    config = alr::cli::load_run_config(config_path);
    alr::cli::apply_overrides(config, overrides);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return alr::cli::execute(app.get_subcommands().front()->get_name(), std::move(config), std::cout, std::cerr);
}
