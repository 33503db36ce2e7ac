#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "attnlreg/analysis/analysis.hpp"

namespace alr::analysis {
namespace {

namespace fs = std::filesystem;

AblationGrid grid_of(std::size_t n, std::vector<double> deltas) {
  AblationGrid g;
  g.tokens = n;
  g.deltas = std::move(deltas);
  return g;
}

Array<float> softmax_maps(const Array<double>& logits) {
  Array<float> out(logits.dims());
  const std::size_t n = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double m = -INFINITY, s = 0;
    for (std::size_t c = 0; c < n; ++c) m = std::max(m, logits[r * n + c]);
    for (std::size_t c = 0; c < n; ++c) s += std::exp(logits[r * n + c] - m);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = float(std::exp(logits[r * n + c] - m) / s);
  }
  return out;
}

std::vector<data::WindowPair> synthetic_windows(std::size_t variables, std::size_t count, const model::ModelConfig& c,
                                                std::uint64_t seed) {
  const std::size_t length = count + c.lookback + c.horizon - 1 + 50;
  data::SyntheticSpec spec;
  if (variables > 1) {
    spec = data::planted_coupling_spec(variables, length, 2, 4, 0.05, seed);
  } else {
    spec.length = length;
    spec.periods = {12};
    spec.noise_std = 0.05;
    spec.seed = seed;
  }
  const auto series = data::normalize(data::synth_generate(spec).series).first;
  auto w = data::make_windows(series, c.lookback, c.horizon);
  w.resize(count);
  return w;
}

model::ModelConfig tiny(std::size_t variables) {
  model::ModelConfig c;
  c.variables = variables;
  c.lookback = 16;
  c.horizon = 4;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_hidden = 8;
  c.layers = 2;
  return c;
}

TEST(HorizonPosition, ParseAndResolve) {
  EXPECT_EQ(HorizonPosition::parse("first").resolve(96), 0u);
  EXPECT_EQ(HorizonPosition::parse("last").resolve(96), 95u);
  EXPECT_EQ(HorizonPosition::parse("7").resolve(96), 7u);
  EXPECT_EQ(HorizonPosition::parse("7").to_string(), "7");
  EXPECT_THROW(HorizonPosition::parse("7").resolve(7), InvalidArgument);
  EXPECT_THROW(HorizonPosition::parse("middle"), InvalidArgument);
  EXPECT_THROW(HorizonPosition::parse("-1"), InvalidArgument);
}

TEST(MapSparsity, UniformMapHasNoSparseEntries) {
  const Array<float> maps({1, 100, 100}, 0.01f);
  EXPECT_EQ(map_sparsity(maps, kDefaultSparsityThreshold), 0.0);
}

TEST(MapSparsity, CraftedTwoTokenRows) {
  Array<double> logits({3, 2, 2});
  for (std::size_t r = 0; r < 6; ++r) {
    logits[2 * r] = -20;
    logits[2 * r + 1] = 0;
  }
  EXPECT_EQ(map_sparsity(softmax_maps(logits), 1e-5), 0.5);
}

TEST(MapSparsity, MonotoneInThreshold) {
  Rng rng(3);
  Array<double> logits({4, 6, 6});
  for (auto& v : logits.storage()) v = rng.uniform(-25, 5);
  const Array<float> maps = softmax_maps(logits);
  double prev = 0;
  for (double th : {1e-12, 1e-9, 1e-7, 1e-5, 1e-3, 1e-1, 1.0}) {
    const double s = map_sparsity(maps, th);
    EXPECT_GE(s, prev);
    EXPECT_LE(s, 1.0);
    prev = s;
  }
}

TEST(Redundancy, Examples) {
  EXPECT_EQ(redundancy_proportion(grid_of(2, {1, 2, 3, 4})), 0.0);
  EXPECT_EQ(redundancy_proportion(grid_of(2, {-1, 0, 2, -3})), 0.5);
  EXPECT_EQ(beneficial_proportion(grid_of(2, {-1, 0, 2, -3})), 0.25);
  EXPECT_EQ(redundancy_proportion(grid_of(2, {1e-7, -1e-7, 0, -5e-8})), 0.0);
  EXPECT_EQ(beneficial_proportion(grid_of(2, {1e-7, -1e-7, 0, -5e-8})), 0.0);
}

TEST(Ablation, SingleTokenGridAndCsv) {
  const model::ModelConfig c = tiny(1);
  Rng rng(1);
  const auto params = model::init_params<float>(c, rng);
  const auto windows = synthetic_windows(1, 12, c, 4);
  AblationOptions opts;
  opts.layer = 1;
  opts.sample_count = 10;
  const AblationGrid g = dependency_ablation(c, params, windows, opts);
  EXPECT_EQ(g.tokens, 1u);
  EXPECT_EQ(g.sample_count, 10u);
  EXPECT_EQ(g.horizon_step, c.horizon - 1);
  const auto base = horizon_errors(c, params, std::span(windows).first(10), c.horizon - 1);
  double mean = 0;
  for (double e : base) mean += e;
  EXPECT_NEAR(g.baseline_error, mean / 10, 1e-9);

  const fs::path p = fs::temp_directory_path() / "atlr_grid_single.csv";
  write_grid_csv(g, p);
  std::ifstream is(p);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "token,0");
  fs::remove(p);
}

TEST(Ablation, SampleCountBeyondWindowsIsRejected) {
  const model::ModelConfig c = tiny(3);
  Rng rng(1);
  const auto params = model::init_params<float>(c, rng);
  const auto windows = synthetic_windows(3, 5, c, 4);
  AblationOptions opts;
  opts.sample_count = 6;
  try {
    dependency_ablation(c, params, windows, opts);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("sample_count"), std::string::npos);
  }
  opts.sample_count = 5;
  opts.layer = 2;
  EXPECT_THROW(dependency_ablation(c, params, windows, opts), InvalidArgument);
}

TEST(Ablation, ThreadCountDoesNotChangeTheGrid) {
  const model::ModelConfig c = tiny(4);
  Rng rng(2);
  const auto params = model::init_params<float>(c, rng);
  const auto windows = synthetic_windows(4, 20, c, 5);
  AblationOptions opts;
  opts.sample_count = 20;
  opts.horizon = HorizonPosition::parse("first");
  const AblationGrid one = dependency_ablation(c, params, windows, opts);
  opts.threads = 3;
  const AblationGrid three = dependency_ablation(c, params, windows, opts);
  EXPECT_EQ(one.deltas, three.deltas);
  EXPECT_EQ(one.tokens, 4u);
}

TEST(Ablation, NegligibleEntriesHaveNegligibleDeltas) {
  // Every query is the same large vector and variables have distinct shapes,
  // so each row puts essentially all of its mass on one key.
  model::ModelConfig c = tiny(4);
  c.layers = 1;
  c.heads = 1;
  Rng rng(7);
  auto params = model::init_params<float>(c, rng);
  params["layers.0.attn.wq"].value = Array<float>({c.d_model, c.d_model});
  for (auto& v : params["layers.0.attn.bq"].value.storage()) v = float(rng.uniform(-100, 100));
  std::vector<data::WindowPair> windows;
  for (std::size_t i = 0; i < 30; ++i) {
    data::WindowPair w{Array<float>({c.lookback, 4}), Array<float>({c.horizon, 4}), i};
    for (std::size_t t = 0; t < c.lookback; ++t)
      for (std::size_t v = 0; v < 4; ++v) w.x.at(t, v) = float(std::sin(0.4 * double((v + 1) * t)) + 0.05 * rng.normal());
    for (auto& y : w.y.storage()) y = float(rng.normal());
    windows.push_back(w);
  }
  const auto batch = model::make_batch<float>(std::span(windows));
  const auto trace = model::predict(c, params, batch.x).trace;
  const std::size_t n = 4;
  std::vector<float> peak(n * n, 0.0f);
  const Array<float>& maps = trace.records[0].maps;
  for (std::size_t m = 0; m < maps.dim(0); ++m)
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q) peak[p * n + q] = std::max(peak[p * n + q], maps.at(m, p, q));
  AblationOptions opts;
  opts.layer = 0;
  opts.sample_count = 30;
  const AblationGrid g = dependency_ablation(c, params, windows, opts);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < n * n; ++i) {
    if (peak[i] < 1e-7f) {
      EXPECT_LT(std::abs(g.deltas[i]), 1e-4);
      ++checked;
    }
  }
  EXPECT_GT(checked, 0u) << ::testing::PrintToString(peak);
}

TEST(Ablation, PatchGlobalSpaceIsBlockDiagonal) {
  model::ModelConfig c = tiny(2);
  c.tokenizer = model::TokenizerKind::patch;
  c.lookback = 16;
  c.patch_len = 8;
  c.stride = 4;
  Rng rng(3);
  const auto params = model::init_params<float>(c, rng);
  const auto windows = synthetic_windows(2, 6, c, 8);
  AblationOptions opts;
  opts.sample_count = 6;
  const AblationGrid local = dependency_ablation(c, params, windows, opts);
  EXPECT_EQ(local.tokens, 3u);
  opts.index_space = TokenIndexSpace::global;
  const AblationGrid global = dependency_ablation(c, params, windows, opts);
  ASSERT_EQ(global.tokens, 6u);
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t q = 3; q < 6; ++q) {
      EXPECT_EQ(global.at(p, q), 0.0);
      EXPECT_EQ(global.at(q, p), 0.0);
    }
}

TEST(Sparsity, ReportOnAModel) {
  const model::ModelConfig c = tiny(3);
  Rng rng(4);
  const auto params = model::init_params<float>(c, rng);
  const auto windows = synthetic_windows(3, 9, c, 2);
  const SparsityReport r = sparsity(c, params, windows, 1, 1e-5);
  EXPECT_EQ(r.layer, 1u);
  EXPECT_EQ(r.windows, 9u);
  EXPECT_GE(r.sparsity, 0.0);
  EXPECT_LE(r.sparsity, 1.0);
  EXPECT_TRUE(std::isfinite(r.mse));
  EXPECT_EQ(sparsity(c, params, windows, 1, 2.0).sparsity, 1.0);
  EXPECT_THROW(sparsity(c, params, windows, 2, 1e-5), InvalidArgument);
  EXPECT_EQ(to_json(r).at("layer"), 1);
}

TEST(Atomicity, DeadDimensionIsNotNeeded) {
  const model::ModelConfig c = tiny(3);
  Rng rng(5);
  auto params = model::init_params<float>(c, rng);
  auto& w = params["head.weight"].value;
  for (std::size_t s = 0; s < c.horizon; ++s) w.at(2, s) = 0.0f;
  const auto windows = synthetic_windows(3, 10, c, 3);
  const AtomicityReport r = atomicity_score(c, params, windows);
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.dimensions, c.d_model);
  for (const auto& e : r.entries) {
    EXPECT_GE(e.needed_fraction, 0.0);
    EXPECT_LE(e.needed_fraction, (c.d_model - 1.0) / c.d_model);
    EXPECT_FALSE(e.atomic);
  }
}

TEST(Atomicity, OneDimensionalOracle) {
  // Constant target of 2; the single final dimension carries the whole forecast.
  model::ModelConfig c = tiny(2);
  c.d_model = 1;
  c.heads = 1;
  c.layers = 1;
  Rng rng(6);
  auto params = model::init_params<float>(c, rng);
  params["final_norm.beta"].value = Array<float>({1}, 1.0f);
  params["head.weight"].value = Array<float>({1, c.horizon}, 2.0f);
  std::vector<data::WindowPair> windows;
  for (std::size_t i = 0; i < 5; ++i) {
    data::WindowPair w{Array<float>({c.lookback, 2}, 2.0f), Array<float>({c.horizon, 2}, 2.0f), i};
    windows.push_back(w);
  }
  const AtomicityReport r = atomicity_score(c, params, windows);
  for (const auto& e : r.entries) {
    EXPECT_EQ(e.needed_fraction, 1.0);
    EXPECT_TRUE(e.atomic);
    EXPECT_EQ(e.baseline_mse, 0.0);
  }
}

TEST(Atomicity, UntrainedModelProducesAValidReport) {
  model::ModelConfig c = tiny(2);
  c.tokenizer = model::TokenizerKind::patch;
  c.patch_len = 8;
  c.stride = 8;
  Rng rng(9);
  const auto params = model::init_params<float>(c, rng);
  const auto windows = synthetic_windows(2, 4, c, 1);
  const AtomicityReport r = atomicity_score(c, params, windows);
  ASSERT_EQ(r.entries.size(), 2u);
  for (const auto& e : r.entries) {
    EXPECT_GE(e.needed_fraction, 0.0);
    EXPECT_LE(e.needed_fraction, 1.0);
  }
  EXPECT_TRUE(to_json(r).contains("tokens"));
}

}  // namespace
}  // namespace alr::analysis
