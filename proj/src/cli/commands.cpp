#include "attnlreg/cli/commands.hpp"

#include <fstream>
#include <ostream>

#include "attnlreg/model/checkpoint.hpp"

namespace alr::cli {

namespace fs = std::filesystem;

namespace {

nlohmann::json artifact_header(const RunConfig& config) {
  return {{"seed", config.seed}, {"config_hash", config.hash()}, {"format_version", kArtifactFormatVersion}};
}

// Copies every top-level field of `from` into `into`.
void merge_into(nlohmann::json& into, const nlohmann::json& from) {
  for (const auto& item : from.items()) into[item.key()] = item.value();
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot write '" + path.string() + "'");
  os << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open '" + path.string() + "'");
  nlohmann::json j;
  is >> j;
  return j;
}

nlohmann::json graph_json(const std::vector<data::Coupling>& graph) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : graph) {
    list.push_back({{"target", c.target}, {"source", c.source}, {"lag", c.lag}, {"weight", c.weight}});
  }
  return list;
}

// Loads the trained parameters and checks them against the run config.
model::ModelParams<float> load_trained(const RunConfig& config) {
  const fs::path ckpt = config.out / kCheckpointFile;
  if (!fs::exists(ckpt)) throw InvalidArgument("checkpoint '" + ckpt.string() + "' not found; run train first");
  const model::ModelConfig saved = model::load_config(ckpt);
  const nlohmann::json want = model::to_json(config.model);
  const nlohmann::json have = model::to_json(saved);
  for (const auto& item : want.items()) {
    if (!have.contains(item.key()) || have.at(item.key()) != item.value()) {
      throw InvalidArgument("checkpoint/config mismatch in field 'model." + item.key() + "': checkpoint has " +
                            (have.contains(item.key()) ? have.at(item.key()).dump() : "nothing") + ", config has " +
                            item.value().dump());
    }
  }
  model::ModelParams<float> params = model::load_checkpoint(ckpt);
  model::check_compatible(config.model, params);
  return params;
}

void cmd_synth(const RunConfig& config, PreparedData& prepared, std::ostream& log) {
  if (!config.data.synthetic) throw InvalidArgument("config field 'data.synthetic': synth needs a synthetic data source");
  data::write_csv(prepared.series, config.out / kSyntheticCsv);
  nlohmann::json j = artifact_header(config);
  j["couplings"] = graph_json(prepared.graph);
  write_json(j, config.out / kSyntheticGraph);
  log << "wrote " << (config.out / kSyntheticCsv).string() << " (" << prepared.series.length() << " x "
      << prepared.series.variables() << ") and " << kSyntheticGraph << '\n';
}

void cmd_train(const RunConfig& config, PreparedData& prepared, std::ostream& log) {
  Rng rng(config.seed);
  model::ModelParams<float> init = model::init_params<float>(config.model, rng);
  const objective::RegSchedule schedule = config.schedule();
  const objective::TrainResult result =
      objective::train_model(config.model, std::move(init), prepared.train, prepared.val, schedule, config.train_settings());

  const fs::path ckpt = config.out / kCheckpointFile;
  model::save_checkpoint(result.params, ckpt);
  nlohmann::json sidecar = artifact_header(config);
  sidecar["alphas"] = schedule.alphas;
  sidecar["normalization"] = {{"mean", prepared.stats.mean}, {"std", prepared.stats.std}};
  model::save_config(config.model, ckpt, sidecar);

  nlohmann::json metrics = artifact_header(config);
  metrics["alphas"] = schedule.alphas;
  metrics["penalty"] = objective::to_string(config.penalty);
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : result.history) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_mse", e.train_mse},
                      {"train_total", e.train_total},
                      {"reg_per_layer", e.reg_per_layer},
                      {"val_mse", e.val_mse}});
    log << "epoch " << e.epoch << "  train_mse " << e.train_mse << "  val_mse " << e.val_mse << '\n';
  }
  metrics["epochs"] = epochs;
  metrics["best_epoch"] = result.best_epoch;
  metrics["best_val_mse"] = result.best_val_mse;
  metrics["early_stopped"] = result.early_stopped;
  write_json(metrics, config.out / kMetricsFile);
  log << "saved " << ckpt.string() << " (best epoch " << result.best_epoch << ")\n";
}

void cmd_eval(const RunConfig& config, PreparedData& prepared, std::ostream& log) {
  const model::ModelParams<float> params = load_trained(config);
  const objective::EvalMetrics m = objective::evaluate(config.model, params, prepared.test);
  const fs::path path = config.out / kMetricsFile;
  nlohmann::json metrics = fs::exists(path) ? read_json(path) : nlohmann::json::object();
  merge_into(metrics, artifact_header(config));
  metrics["test"] = {{"mse", m.mse}, {"mae", m.mae}, {"windows", m.windows}};
  write_json(metrics, path);
  log << "test mse " << m.mse << "  mae " << m.mae << " over " << m.windows << " windows\n";
}

void cmd_ablate(const RunConfig& config, PreparedData& prepared, std::ostream& log) {
  const model::ModelParams<float> params = load_trained(config);
  analysis::AblationOptions opts;
  opts.layer = config.analysis.layer.value_or(config.model.layers - 1);
  opts.horizon = config.analysis.horizon;
  opts.sample_count = config.analysis.samples;
  opts.index_space = config.analysis.index_space;
  opts.threads = config.analysis.threads;
  if (opts.sample_count == 0 || opts.sample_count > prepared.test.size()) {
    throw InvalidArgument("config field 'analysis.sample_count': " + std::to_string(opts.sample_count) +
                          " exceeds the " + std::to_string(prepared.test.size()) + " test windows");
  }
  if (opts.layer >= config.model.layers) {
    throw InvalidArgument("config field 'analysis.layer': " + std::to_string(opts.layer) + " >= model.layers");
  }
  const analysis::AblationGrid grid = analysis::dependency_ablation(config.model, params, prepared.test, opts);
  const std::string stem = grid_file_stem(opts.layer, opts.horizon);
  analysis::write_grid_csv(grid, config.out / (stem + ".csv"));
  nlohmann::json side = artifact_header(config);
  merge_into(side, analysis::to_json(grid));
  side["redundancy_proportion"] = analysis::redundancy_proportion(grid);
  write_json(side, config.out / (stem + ".json"));
  log << "wrote " << stem << ".csv (" << grid.tokens << " x " << grid.tokens << "), redundancy "
      << analysis::redundancy_proportion(grid) << '\n';
}

void cmd_sparsity(const RunConfig& config, PreparedData& prepared, std::ostream& log) {
  const model::ModelParams<float> params = load_trained(config);
  const std::size_t layer = config.analysis.layer.value_or(0);
  if (layer >= config.model.layers) {
    throw InvalidArgument("config field 'analysis.layer': " + std::to_string(layer) + " >= model.layers");
  }
  const analysis::SparsityReport r =
      analysis::sparsity(config.model, params, prepared.test, layer, config.analysis.threshold);
  nlohmann::json j = artifact_header(config);
  merge_into(j, analysis::to_json(r));
  write_json(j, config.out / sparsity_file(layer));
  log << "layer " << layer << " sparsity " << r.sparsity << "  mse " << r.mse << '\n';
}

void cmd_atomicity(const RunConfig& config, PreparedData& prepared, std::ostream& log) {
  const model::ModelParams<float> params = load_trained(config);
  const analysis::AtomicityReport r = analysis::atomicity_score(config.model, params, prepared.test);
  nlohmann::json j = artifact_header(config);
  merge_into(j, analysis::to_json(r));
  write_json(j, config.out / kAtomicityFile);
  std::size_t atomic = 0;
  for (const auto& e : r.entries) atomic += e.atomic ? 1 : 0;
  log << atomic << " of " << r.entries.size() << " tokens atomic\n";
}

}  // namespace

std::string grid_file_stem(std::size_t layer, const analysis::HorizonPosition& position) {
  return "grid_layer" + std::to_string(layer) + "_" + position.to_string();
}

std::string sparsity_file(std::size_t layer) { return "sparsity_layer" + std::to_string(layer) + ".json"; }

std::vector<std::string_view> command_names() { return {"synth", "train", "eval", "ablate", "sparsity", "atomicity"}; }

PreparedData prepare_data(RunConfig& config) {
  PreparedData out;
  if (const auto spec = config.synthetic_spec()) {
    data::SyntheticData synth = data::synth_generate(*spec);
    out.series = std::move(synth.series);
    out.graph = std::move(synth.graph);
  } else {
    out.series = data::load_csv(*config.data.csv);
  }
  const std::size_t n = out.series.variables();
  if (config.model.variables == 0) {
    config.model.variables = n;
  } else if (config.model.variables != n) {
    throw InvalidArgument("config field 'model.variables': config has " + std::to_string(config.model.variables) +
                          " but the data has " + std::to_string(n));
  }
  config.model.validate();
  const data::Splits splits = data::chronological_split(out.series, config.split);
  auto [train, stats] = data::normalize(splits.train);
  out.stats = stats;
  const auto val = data::normalize(splits.val, stats).first;
  const auto test = data::normalize(splits.test, stats).first;
  out.train = data::make_windows(train, config.model.lookback, config.model.horizon);
  out.val = data::make_windows(val, config.model.lookback, config.model.horizon);
  out.test = data::make_windows(test, config.model.lookback, config.model.horizon);
  return out;
}

int execute(std::string_view command, RunConfig config, std::ostream& log, std::ostream& err) {
  const auto names = command_names();
  if (std::find(names.begin(), names.end(), command) == names.end()) {
    err << "error: unknown command '" << command << "' (expected synth, train, eval, ablate, sparsity or atomicity)\n";
    return 2;
  }
  try {
    fs::create_directories(config.out);
    if (command == "synth") {
      // Only the generator is needed; splitting is skipped so short series are fine.
      const auto spec = config.synthetic_spec();
      if (!spec) throw InvalidArgument("config field 'data.synthetic': synth needs a synthetic data source");
      data::SyntheticData synth = data::synth_generate(*spec);
      PreparedData prepared;
      prepared.series = std::move(synth.series);
      prepared.graph = std::move(synth.graph);
      cmd_synth(config, prepared, log);
      return 0;
    }
    PreparedData prepared = prepare_data(config);
    if (command == "train") cmd_train(config, prepared, log);
    if (command == "eval") cmd_eval(config, prepared, log);
    if (command == "ablate") cmd_ablate(config, prepared, log);
    if (command == "sparsity") cmd_sparsity(config, prepared, log);
    if (command == "atomicity") cmd_atomicity(config, prepared, log);
    return 0;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace alr::cli
