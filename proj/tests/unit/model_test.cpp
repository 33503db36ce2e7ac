#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "attnlreg/model/checkpoint.hpp"
#include "attnlreg/model/transformer.hpp"
#include "gradcheck.hpp"

namespace alr::model {
namespace {

namespace fs = std::filesystem;

ModelConfig small_inverted(std::size_t variables = 3) {
  ModelConfig c;
  c.variables = variables;
  c.lookback = 16;
  c.horizon = 4;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_hidden = 12;
  c.layers = 2;
  c.activation = ActivationKind::gelu;
  return c;
}

ModelConfig small_patch() {
  ModelConfig c = small_inverted(2);
  c.tokenizer = TokenizerKind::patch;
  c.lookback = 24;
  c.patch_len = 8;
  c.stride = 4;
  return c;
}

template <typename T>
Array<T> random_input(std::size_t batch, const ModelConfig& c, Rng& rng) {
  Array<T> x({batch, c.lookback, c.variables});
  for (auto& v : x.storage()) v = T(rng.normal());
  return x;
}

template <typename T>
Batch<T> random_batch(std::size_t batch, const ModelConfig& c, Rng& rng) {
  Batch<T> b{random_input<T>(batch, c, rng), Array<T>({batch * c.variables, c.horizon})};
  for (auto& v : b.y.storage()) v = T(rng.normal());
  return b;
}

// Every parameter scaled so attention is far from uniform and gradients are not tiny.
template <typename T>
void perturb(ModelParams<T>& params, Rng& rng, double spread = 0.3) {
  for (auto& p : params.all()) {
    for (auto& v : p.value.storage()) v += T(rng.uniform(-spread, spread));
  }
}

TEST(Config, Validation) {
  ModelConfig c = small_inverted();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_patch();
  c.patch_len = 40;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_inverted();
  try {
    c.d_model = 0;
    c.validate();
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("model.d_model"), std::string::npos) << e.what();
  }
}

TEST(Config, JsonRoundTrip) {
  ModelConfig c = small_patch();
  c.learnable_mask = true;
  c.instance_norm = true;
  EXPECT_EQ(to_json(model_config_from_json(to_json(c))), to_json(c));
}

TEST(Tokenize, InvertedGivesOneTokenPerVariable) {
  ModelConfig c = small_inverted(7);
  c.lookback = 96;
  Rng rng(1);
  auto params = init_params<float>(c, rng);
  Tape<float> t(false);
  const Var tok = tokenize(t, c, std::as_const(params), random_input<float>(1, c, rng));
  EXPECT_EQ(t.value(tok).dims(), (Dims{7, c.d_model}));
}

TEST(Tokenize, PatchCount) {
  ModelConfig c = small_inverted(1);
  c.tokenizer = TokenizerKind::patch;
  c.lookback = 96;
  c.patch_len = 16;
  c.stride = 8;
  EXPECT_EQ(c.patch_count(), 11u);
  Rng rng(1);
  auto params = init_params<float>(c, rng);
  Tape<float> t(false);
  const Var tok = tokenize(t, c, std::as_const(params), random_input<float>(2, c, rng));
  EXPECT_EQ(t.value(tok).dims(), (Dims{22, c.d_model}));
}

TEST(Tokenize, ZeroInputWithZeroBiasIsZero) {
  const ModelConfig c = small_inverted();
  Rng rng(3);
  auto params = init_params<float>(c, rng);
  Tape<float> t(false);
  const Var tok = tokenize(t, c, std::as_const(params), Array<float>({2, c.lookback, c.variables}));
  for (float v : t.value(tok).storage()) EXPECT_EQ(v, 0.0f);
}

TEST(Init, DeterministicWithZeroBiasesAndUnitGamma) {
  ModelConfig c = small_inverted();
  Rng a(77), b(77);
  const auto pa = init_params<float>(c, a);
  const auto pb = init_params<float>(c, b);
  ASSERT_EQ(pa.all().size(), pb.all().size());
  for (std::size_t i = 0; i < pa.all().size(); ++i) {
    const auto& p = pa.all()[i];
    EXPECT_EQ(p.value, pb.all()[i].value) << p.name;
    const bool bias = p.name.ends_with("bias") || p.name.ends_with(".bq") || p.name.ends_with(".bk") ||
                      p.name.ends_with(".bv") || p.name.ends_with(".bo") || p.name.ends_with(".b1") ||
                      p.name.ends_with(".b2") || p.name.ends_with(".beta");
    if (bias) {
      for (float v : p.value.storage()) EXPECT_EQ(v, 0.0f) << p.name;
    }
    if (p.name.ends_with(".gamma")) {
      for (float v : p.value.storage()) EXPECT_EQ(v, 1.0f) << p.name;
    }
  }
  EXPECT_TRUE(pa.contains("layers.1.attn.wq"));
  EXPECT_FALSE(pa.contains("layers.0.attn.mask"));
}

TEST(Init, GlorotUniformStatistics) {
  ModelConfig c = small_inverted();
  c.d_model = 64;
  c.heads = 1;
  Rng rng(5);
  const auto params = init_params<double>(c, rng);
  const Array<double>& w = params["layers.0.attn.wq"].value;
  ASSERT_EQ(w.dims(), (Dims{64, 64}));
  const double a = std::sqrt(6.0 / 128.0);
  const double mean = std::accumulate(w.storage().begin(), w.storage().end(), 0.0) / 4096.0;
  EXPECT_LT(std::abs(mean), 3 * a / std::sqrt(3.0 * 4096));
  for (double v : w.storage()) EXPECT_LE(std::abs(v), a);
}

TEST(SelfAttention, IdentityProjectionsGiveScaledIdentityScores) {
  ModelConfig c = small_inverted(2);
  c.d_model = 2;
  c.heads = 1;
  c.ffn_hidden = 2;
  Rng rng(1);
  auto params = init_params<double>(c, rng);
  params["layers.0.attn.wq"].value = Array<double>({2, 2}, {1, 0, 0, 1});
  params["layers.0.attn.wk"].value = Array<double>({2, 2}, {1, 0, 0, 1});
  Tape<double> t(false);
  const Var tokens = t.constant(Array<double>({2, 2}, {1, 0, 0, 1}));
  const auto out = self_attention(t, c, std::as_const(params), 0, tokens, 1, std::nullopt);
  const auto& s = t.value(out.scores);
  const double d = 1 / std::sqrt(2.0);
  EXPECT_NEAR(s.at(0, 0, 0), d, 1e-15);
  EXPECT_NEAR(s.at(0, 1, 1), d, 1e-15);
  EXPECT_EQ(s.at(0, 0, 1), 0.0);
  EXPECT_EQ(s.at(0, 1, 0), 0.0);
}

TEST(SelfAttention, SingleTokenMapIsExactlyOneAndAblationZeroesContext) {
  const ModelConfig c = small_inverted(1);
  Rng rng(2);
  auto params = init_params<float>(c, rng);
  perturb(params, rng);
  Tape<float> t(false);
  const Var tokens = tokenize(t, c, std::as_const(params), random_input<float>(3, c, rng));
  const auto plain = self_attention(t, c, std::as_const(params), 0, tokens, 3, std::nullopt);
  for (float v : t.value(plain.maps).storage()) EXPECT_EQ(v, 1.0f);
  const auto cut = self_attention(t, c, std::as_const(params), 0, tokens, 3, AblationDirective{0, 0, 0, {}});
  for (float v : t.value(cut.context).storage()) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, ZeroWeightsGiveHeadBias) {
  ModelConfig c = small_inverted();
  Rng rng(4);
  auto params = init_params<float>(c, rng);
  for (auto& p : params.all()) p.value = Array<float>::zeros_like(p.value);
  auto& b = params["head.bias"].value;
  for (std::size_t s = 0; s < b.size(); ++s) b[s] = float(s) + 0.5f;
  for (int trial = 0; trial < 2; ++trial) {
    const Prediction out = predict(c, params, random_input<float>(2, c, rng));
    ASSERT_EQ(out.values.dims(), (Dims{2, c.horizon, c.variables}));
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t s = 0; s < c.horizon; ++s)
        for (std::size_t n = 0; n < c.variables; ++n) EXPECT_EQ(out.values.at(i, s, n), b[s]);
  }
}

TEST(Forward, DeterministicPredictionsAndTraces) {
  const ModelConfig c = small_patch();
  Rng rng(6);
  const auto params = init_params<float>(c, rng);
  const Array<float> x = random_input<float>(3, c, rng);
  const Prediction a = predict(c, params, x);
  const Prediction b = predict(c, params, x);
  EXPECT_EQ(a.values, b.values);
  ASSERT_EQ(a.trace.records.size(), c.layers);
  for (std::size_t l = 0; l < c.layers; ++l) {
    EXPECT_EQ(a.trace.records[l].scores, b.trace.records[l].scores);
    EXPECT_EQ(a.trace.records[l].maps, b.trace.records[l].maps);
    EXPECT_EQ(a.trace.records[l].maps.dims(), (Dims{3 * c.variables * c.heads, c.patch_count(), c.patch_count()}));
  }
  EXPECT_EQ(a.trace.samples, 3u);
}

TEST(Forward, DeadDimensionAblationIsANoOp) {
  const ModelConfig c = small_inverted();
  Rng rng(8);
  auto params = init_params<float>(c, rng);
  perturb(params, rng);
  auto& w = params["head.weight"].value;  // (D x S)
  const std::size_t j = 5;
  for (std::size_t s = 0; s < c.horizon; ++s) w.at(j, s) = 0.0f;
  const Array<float> x = random_input<float>(2, c, rng);
  ForwardOptions opts;
  opts.ablate_dim = j;
  EXPECT_EQ(predict(c, params, x, opts).values, predict(c, params, x).values);
  opts.ablate_dim = 4;
  EXPECT_NE(predict(c, params, x, opts).values, predict(c, params, x).values);
}

TEST(Forward, InvertedModelIsVariablePermutationEquivariant) {
  const ModelConfig c = small_inverted(4);
  Rng rng(10);
  auto params = init_params<double>(c, rng);
  perturb(params, rng);
  const Array<double> x = random_input<double>(2, c, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Array<double> xp = x;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < c.lookback; ++t)
      for (std::size_t n = 0; n < 4; ++n) xp.at(b, t, n) = x.at(b, t, perm[n]);
  const Array<float> y = predict(c, params, x).values;
  const Array<float> yp = predict(c, params, xp).values;
  for (std::size_t r = 0; r < y.size() / 4; ++r)
    for (std::size_t n = 0; n < 4; ++n) EXPECT_NEAR(yp[r * 4 + n], y[r * 4 + perm[n]], 1e-6);
}

TEST(Forward, AblationChangesOnlyTheTargetedLayerMap) {
  const ModelConfig c = small_inverted();
  Rng rng(12);
  auto params = init_params<float>(c, rng);
  perturb(params, rng);
  const Array<float> x = random_input<float>(2, c, rng);
  ForwardOptions opts;
  opts.ablation = AblationDirective{1, 0, 2, {}};
  const Prediction base = predict(c, params, x);
  const Prediction cut = predict(c, params, x, opts);
  EXPECT_EQ(base.trace.records[0].maps, cut.trace.records[0].maps);
  EXPECT_EQ(base.trace.records[1].maps, cut.trace.records[1].maps);  // recorded before the edit
  EXPECT_NE(base.values, cut.values);
}

TEST(Forward, PatchAblationCanTargetOneVariable) {
  const ModelConfig c = small_patch();
  Rng rng(14);
  auto params = init_params<float>(c, rng);
  perturb(params, rng);
  const Array<float> x = random_input<float>(1, c, rng);
  ForwardOptions opts;
  opts.ablation = AblationDirective{0, 1, 1, 1};
  const Array<float> base = predict(c, params, x).values;
  const Array<float> cut = predict(c, params, x, opts).values;
  for (std::size_t s = 0; s < c.horizon; ++s) {
    EXPECT_EQ(base.at(0, s, 0), cut.at(0, s, 0));
    EXPECT_NE(base.at(0, s, 1), cut.at(0, s, 1));
  }
}

TEST(Forward, RejectsOutOfRangeDirectives) {
  const ModelConfig c = small_inverted();
  Rng rng(1);
  const auto params = init_params<float>(c, rng);
  const Array<float> x = random_input<float>(1, c, rng);
  ForwardOptions opts;
  opts.ablation = AblationDirective{2, 0, 0, {}};
  EXPECT_THROW(predict(c, params, x, opts), InvalidArgument);
  opts.ablation = AblationDirective{0, 3, 0, {}};
  EXPECT_THROW(predict(c, params, x, opts), InvalidArgument);
  opts.ablation.reset();
  opts.ablate_dim = c.d_model;
  EXPECT_THROW(predict(c, params, x, opts), InvalidArgument);
  EXPECT_THROW(predict(c, params, Array<float>({1, c.lookback + 1, c.variables})), InvalidArgument);
}

TEST(Forward, InstanceNormMakesOutputShiftEquivariant) {
  ModelConfig c = small_inverted();
  c.instance_norm = true;
  Rng rng(16);
  auto params = init_params<double>(c, rng);
  perturb(params, rng);
  const Array<double> x = random_input<double>(1, c, rng);
  Array<double> shifted = x;
  for (auto& v : shifted.storage()) v += 10.0;
  const Array<float> y = predict(c, params, x).values;
  const Array<float> ys = predict(c, params, shifted).values;
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(ys[i], y[i] + 10.0f, 1e-4);
}

struct GradCase {
  const char* name;
  ModelConfig config;
};

void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }

class ModelGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(ModelGradient, MatchesFiniteDifferences) {
  const ModelConfig c = GetParam().config;
  Rng rng(31);
  auto params = init_params<double>(c, rng);
  perturb(params, rng);
  const Batch<double> batch = random_batch<double>(2, c, rng);
  const objective::RegSchedule schedule = objective::default_schedule(0.05, 0.7, c.layers);
  const objective::PenaltyTarget target =
      c.learnable_mask ? objective::PenaltyTarget::mask_gate : objective::PenaltyTarget::raw_scores;

  for (const auto& e : testing::check_model_gradients(c, params, batch, schedule, 1e-5, 1e-4, target)) {
    EXPECT_LT(e.rel_error, 1e-5) << "f64 " << e.name;
  }
  auto pf = params.cast<float>();
  const Batch<float> bf{cast<float>(batch.x), cast<float>(batch.y)};
  for (const auto& e : testing::check_model_gradients(c, pf, bf, schedule, 1e-3, 5e-2, target)) {
    EXPECT_LT(e.rel_error, 1e-2) << "f32 " << e.name;
  }
}

ModelConfig tiny_inverted() {
  ModelConfig c = small_inverted(2);
  c.layers = 1;
  return c;
}
ModelConfig tiny_patch_mask() {
  ModelConfig c = small_patch();
  c.layers = 1;
  c.learnable_mask = true;
  c.instance_norm = true;
  return c;
}

INSTANTIATE_TEST_SUITE_P(Configs, ModelGradient,
                         ::testing::Values(GradCase{"inverted", tiny_inverted()},
                                           GradCase{"patch_mask", tiny_patch_mask()}),
                         [](const auto& info) { return std::string(info.param.name); });

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("atlr_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  const ModelConfig c = small_patch();
  Rng rng(40);
  auto params = init_params<float>(c, rng);
  perturb(params, rng);
  const fs::path p = dir_ / "m.atlr";
  save_checkpoint(params, p);
  const auto back = load_checkpoint(p);
  ASSERT_EQ(back.all().size(), params.all().size());
  for (std::size_t i = 0; i < params.all().size(); ++i) {
    EXPECT_EQ(back.all()[i].name, params.all()[i].name);
    EXPECT_EQ(std::memcmp(back.all()[i].value.storage().data(), params.all()[i].value.storage().data(),
                          params.all()[i].value.size() * sizeof(float)),
              0);
  }
  EXPECT_NO_THROW(check_compatible(c, back));
}

TEST_F(CheckpointTest, HeaderLayout) {
  ModelParams<float> params;
  params.add("w", Array<float>({2}, {1.0f, -2.0f}));
  const fs::path p = dir_ / "h.atlr";
  save_checkpoint(params, p);
  std::ifstream is(p, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), {});
  const std::vector<unsigned char> expected{'A', 'T', 'L', 'R', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 'w', 1, 0, 0, 0,
                                            2, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(bytes, expected);
}

TEST_F(CheckpointTest, RejectsCorruptFilesAndMismatchedConfigs) {
  const fs::path bad = dir_ / "bad.atlr";
  std::ofstream(bad) << "NOPE";
  EXPECT_THROW(load_checkpoint(bad), std::exception);

  ModelConfig c = small_inverted();
  Rng rng(1);
  const auto params = init_params<float>(c, rng);
  c.d_model = 16;
  try {
    check_compatible(c, params);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("embed.weight"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, ConfigSidecar) {
  const ModelConfig c = small_patch();
  const fs::path p = dir_ / "m.atlr";
  save_config(c, p, {{"seed", 3}});
  EXPECT_EQ(config_sidecar_path(p), dir_ / "m.json");
  EXPECT_EQ(to_json(load_config(p)), to_json(c));
}

}  // namespace
}  // namespace alr::model
