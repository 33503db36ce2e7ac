#include "attnlreg/analysis/analysis.hpp"

#include <charconv>
#include <fstream>
#include <thread>

namespace alr::analysis {

HorizonPosition HorizonPosition::parse(std::string_view text) {
  if (text == "first") return {Kind::first, 0};
  if (text == "last") return {Kind::last, 0};
  std::size_t k = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), k);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw InvalidArgument("horizon_position: expected first, last or a step index, got '" + std::string(text) + "'");
  }
  return {Kind::index, k};
}

std::size_t HorizonPosition::resolve(std::size_t horizon) const {
  switch (kind) {
    case Kind::first: return 0;
    case Kind::last: return horizon - 1;
    case Kind::index:
      if (index >= horizon) {
        throw InvalidArgument("horizon_position: index " + std::to_string(index) + " >= horizon " +
                              std::to_string(horizon));
      }
      return index;
  }
  return 0;
}

std::string HorizonPosition::to_string() const {
  switch (kind) {
    case Kind::first: return "first";
    case Kind::last: return "last";
    case Kind::index: return std::to_string(index);
  }
  return "last";
}

namespace {

// Runs `fn(batch, token-major prediction)` over consecutive chunks of windows.
template <typename T, typename Fn>
void for_each_prediction(const model::ModelConfig& config, const model::ModelParams<T>& params,
                         std::span<const data::WindowPair> windows, const model::ForwardOptions& options,
                         std::size_t batch_size, Fn&& fn) {
  if (windows.empty()) throw InvalidArgument("analysis: no windows");
  if (batch_size == 0) throw InvalidArgument("analysis: batch_size must be positive");
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const auto chunk = windows.subspan(begin, std::min(batch_size, windows.size() - begin));
    const model::Batch<T> batch = model::make_batch<T>(chunk);
    Tape<T> tape(false);
    const model::ForwardVars vars = model::forward(tape, config, params, batch.x, options);
    fn(begin, batch, tape, vars);
  }
}

}  // namespace

template <typename T>
std::vector<double> horizon_errors(const model::ModelConfig& config, const model::ModelParams<T>& params,
                                   std::span<const data::WindowPair> windows, std::size_t step,
                                   const model::ForwardOptions& options, std::size_t batch_size) {
  const std::size_t n = config.variables;
  if (step >= config.horizon) throw InvalidArgument("horizon step out of range");
  std::vector<double> errors(windows.size());
  for_each_prediction(config, params, windows, options, batch_size,
                      [&](std::size_t begin, const model::Batch<T>& batch, const Tape<T>& tape,
                          const model::ForwardVars& vars) {
                        const Array<T>& pred = tape.value(vars.prediction);
                        for (std::size_t b = 0; b < batch.size(); ++b) {
                          double se = 0.0;
                          for (std::size_t j = 0; j < n; ++j) {
                            const double d = static_cast<double>(pred.at(b * n + j, step)) -
                                             static_cast<double>(batch.y.at(b * n + j, step));
                            se += d * d;
                          }
                          errors[begin + b] = se / static_cast<double>(n);
                        }
                      });
  return errors;
}

template <typename T>
AblationGrid dependency_ablation(const model::ModelConfig& config, const model::ModelParams<T>& params,
                                 std::span<const data::WindowPair> windows, const AblationOptions& options) {
  if (options.layer >= config.layers) {
    throw InvalidArgument("layer " + std::to_string(options.layer) + " out of range (" +
                          std::to_string(config.layers) + " layers)");
  }
  if (options.sample_count == 0 || options.sample_count > windows.size()) {
    throw InvalidArgument("sample_count " + std::to_string(options.sample_count) + " exceeds the " +
                          std::to_string(windows.size()) + " available windows");
  }
  const auto sample = windows.first(options.sample_count);
  AblationGrid grid;
  grid.horizon = options.horizon;
  grid.horizon_step = options.horizon.resolve(config.horizon);
  grid.sample_count = options.sample_count;
  grid.layer = options.layer;
  grid.index_space = options.index_space;

  const std::size_t local = config.tokens_per_group();
  const bool global = config.tokenizer == model::TokenizerKind::patch && options.index_space == TokenIndexSpace::global;
  if (config.tokenizer != model::TokenizerKind::patch) grid.index_space = TokenIndexSpace::within_variable;
  grid.tokens = global ? local * config.variables : local;
  grid.deltas.assign(grid.tokens * grid.tokens, 0.0);

  const std::vector<double> base = horizon_errors(config, params, sample, grid.horizon_step, {}, options.batch_size);
  double base_mean = 0.0;
  for (double e : base) base_mean += e;
  grid.baseline_error = base_mean / static_cast<double>(base.size());

  const auto cell = [&](std::size_t index) {
    const std::size_t p = index / grid.tokens, q = index % grid.tokens;
    model::AblationDirective directive{options.layer, p, q, std::nullopt};
    if (global) {
      if (p / local != q / local) return;  // no attention across variables
      directive = {options.layer, p % local, q % local, p / local};
    }
    model::ForwardOptions fo;
    fo.ablation = directive;
    const std::vector<double> errs = horizon_errors(config, params, sample, grid.horizon_step, fo, options.batch_size);
    double delta = 0.0;
    for (std::size_t w = 0; w < errs.size(); ++w) delta += errs[w] - base[w];
    grid.deltas[index] = delta / static_cast<double>(errs.size());
  };

  const std::size_t cells = grid.deltas.size();
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.threads, cells));
  if (workers == 1) {
    for (std::size_t i = 0; i < cells; ++i) cell(i);
  } else {
    // Each worker writes only its own cells, so the grid does not depend on scheduling.
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < cells; i += workers) cell(i);
      });
    }
  }
  return grid;
}

double map_sparsity(const Array<float>& maps, double threshold) {
  std::size_t below = 0;
  for (float v : maps.data()) {
    if (static_cast<double>(v) < threshold) ++below;
  }
  return static_cast<double>(below) / static_cast<double>(maps.size());
}

template <typename T>
SparsityReport sparsity(const model::ModelConfig& config, const model::ModelParams<T>& params,
                        std::span<const data::WindowPair> windows, std::size_t layer, double threshold,
                        std::size_t batch_size) {
  if (layer >= config.layers) {
    throw InvalidArgument("layer " + std::to_string(layer) + " out of range (" + std::to_string(config.layers) +
                          " layers)");
  }
  SparsityReport report;
  report.layer = layer;
  report.threshold = threshold;
  report.windows = windows.size();
  std::size_t below = 0, total = 0;
  double se = 0.0;
  std::size_t se_count = 0;
  for_each_prediction(config, params, windows, {}, batch_size,
                      [&](std::size_t, const model::Batch<T>& batch, const Tape<T>& tape,
                          const model::ForwardVars& vars) {
                        const Array<T>& maps = tape.value(vars.layers[layer].maps);
                        for (T v : maps.data()) {
                          if (static_cast<double>(v) < threshold) ++below;
                        }
                        total += maps.size();
                        const Array<T>& pred = tape.value(vars.prediction);
                        for (std::size_t i = 0; i < pred.size(); ++i) {
                          const double d = static_cast<double>(pred[i]) - static_cast<double>(batch.y[i]);
                          se += d * d;
                        }
                        se_count += pred.size();
                      });
  // Every map has the same size, so the pooled fraction equals the mean
  // over heads and windows.
  report.sparsity = static_cast<double>(below) / static_cast<double>(total);
  report.mse = se / static_cast<double>(se_count);
  return report;
}

double redundancy_proportion(const AblationGrid& grid, double tie_epsilon) {
  if (grid.deltas.empty()) return 0.0;
  std::size_t count = 0;
  for (double d : grid.deltas) {
    if (d < -tie_epsilon) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(grid.deltas.size());
}

double beneficial_proportion(const AblationGrid& grid, double tie_epsilon) {
  if (grid.deltas.empty()) return 0.0;
  std::size_t count = 0;
  for (double d : grid.deltas) {
    if (d > tie_epsilon) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(grid.deltas.size());
}

namespace {

template <typename T>
std::vector<double> per_variable_mse(const model::ModelConfig& config, const model::ModelParams<T>& params,
                                     std::span<const data::WindowPair> windows, const model::ForwardOptions& options,
                                     std::size_t batch_size) {
  const std::size_t n = config.variables;
  std::vector<double> se(n, 0.0);
  std::size_t rows_per_var = 0;
  for_each_prediction(config, params, windows, options, batch_size,
                      [&](std::size_t, const model::Batch<T>& batch, const Tape<T>& tape,
                          const model::ForwardVars& vars) {
                        const Array<T>& pred = tape.value(vars.prediction);
                        const std::size_t horizon = pred.dim(1);
                        for (std::size_t b = 0; b < batch.size(); ++b) {
                          for (std::size_t j = 0; j < n; ++j) {
                            for (std::size_t s = 0; s < horizon; ++s) {
                              const double d = static_cast<double>(pred.at(b * n + j, s)) -
                                               static_cast<double>(batch.y.at(b * n + j, s));
                              se[j] += d * d;
                            }
                          }
                        }
                        rows_per_var += batch.size() * horizon;
                      });
  for (double& v : se) v /= static_cast<double>(rows_per_var);
  return se;
}

}  // namespace

template <typename T>
AtomicityReport atomicity_score(const model::ModelConfig& config, const model::ModelParams<T>& params,
                                std::span<const data::WindowPair> windows, std::size_t batch_size) {
  AtomicityReport report;
  report.dimensions = config.d_model;
  report.windows = windows.size();
  const std::vector<double> base = per_variable_mse(config, params, windows, {}, batch_size);
  std::vector<std::size_t> needed(config.variables, 0);
  for (std::size_t j = 0; j < config.d_model; ++j) {
    model::ForwardOptions fo;
    fo.ablate_dim = j;
    const std::vector<double> ablated = per_variable_mse(config, params, windows, fo, batch_size);
    for (std::size_t i = 0; i < config.variables; ++i) {
      if (ablated[i] > base[i]) ++needed[i];
    }
  }
  for (std::size_t i = 0; i < config.variables; ++i) {
    const double fraction = static_cast<double>(needed[i]) / static_cast<double>(config.d_model);
    report.entries.push_back({i, fraction, needed[i] == config.d_model, base[i]});
  }
  return report;
}

nlohmann::json to_json(const AblationGrid& grid) {
  return {{"layer", grid.layer},
          {"horizon_position", grid.horizon.to_string()},
          {"horizon_step", grid.horizon_step},
          {"sample_count", grid.sample_count},
          {"baseline_error", grid.baseline_error},
          {"tokens", grid.tokens},
          {"token_index_space", grid.index_space == TokenIndexSpace::global ? "global" : "within_variable"},
          {"error_metric", "signed change in squared error at the horizon step, mean over variables and samples"}};
}

nlohmann::json to_json(const SparsityReport& report) {
  return {{"layer", report.layer},
          {"threshold", report.threshold},
          {"sparsity", report.sparsity},
          {"mse", report.mse},
          {"windows", report.windows}};
}

nlohmann::json to_json(const AtomicityReport& report) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& e : report.entries) {
    tokens.push_back({{"token", e.token},
                      {"needed_fraction", e.needed_fraction},
                      {"atomic", e.atomic},
                      {"baseline_mse", e.baseline_mse}});
  }
  return {{"dimensions", report.dimensions},
          {"windows", report.windows},
          {"semantic_unit", "one embedding dimension of the final token, zeroed before decoding"},
          {"tokens", tokens}};
}

void write_grid_csv(const AblationGrid& grid, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot write '" + path.string() + "'");
  os << "token";
  for (std::size_t q = 0; q < grid.tokens; ++q) os << ',' << q;
  os << '\n';
  char buf[32];
  for (std::size_t p = 0; p < grid.tokens; ++p) {
    os << p;
    for (std::size_t q = 0; q < grid.tokens; ++q) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), grid.at(p, q));
      os << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    os << '\n';
  }
}

#define ALR_INSTANTIATE_ANALYSIS(T)                                                                                \
  template std::vector<double> horizon_errors<T>(const model::ModelConfig&, const model::ModelParams<T>&,         \
                                                 std::span<const data::WindowPair>, std::size_t,                  \
                                                 const model::ForwardOptions&, std::size_t);                      \
  template AblationGrid dependency_ablation<T>(const model::ModelConfig&, const model::ModelParams<T>&,           \
                                               std::span<const data::WindowPair>, const AblationOptions&);        \
  template SparsityReport sparsity<T>(const model::ModelConfig&, const model::ModelParams<T>&,                    \
                                      std::span<const data::WindowPair>, std::size_t, double, std::size_t);       \
  template AtomicityReport atomicity_score<T>(const model::ModelConfig&, const model::ModelParams<T>&,            \
                                              std::span<const data::WindowPair>, std::size_t);

ALR_INSTANTIATE_ANALYSIS(float)
ALR_INSTANTIATE_ANALYSIS(double)

}  // namespace alr::analysis
