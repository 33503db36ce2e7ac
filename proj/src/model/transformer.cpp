#include "attnlreg/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "attnlreg/numerics/ops.hpp"

namespace alr::model {

template <typename T>
Parameter<T>& ModelParams<T>::add(std::string name, Array<T> value) {
  if (contains(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
  params_.emplace_back(std::move(name), std::move(value));
  return params_.back();
}

template <typename T>
Parameter<T>& ModelParams<T>::operator[](std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw InvalidArgument("unknown parameter '" + std::string(name) + "'");
}

template <typename T>
const Parameter<T>& ModelParams<T>::operator[](std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw InvalidArgument("unknown parameter '" + std::string(name) + "'");
}

template <typename T>
bool ModelParams<T>::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
}

template <typename T>
std::vector<Parameter<T>*> ModelParams<T>::pointers() {
  std::vector<Parameter<T>*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
std::size_t ModelParams<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

namespace {

std::string layer_name(std::size_t layer, std::string_view leaf) {
  return "layers." + std::to_string(layer) + "." + std::string(leaf);
}

template <typename T>
Array<T> glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Array<T> w({fan_in, fan_out});
  for (T& v : w.data()) v = static_cast<T>(rng.uniform(-a, a));
  return w;
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.d_model;
  ModelParams<T> p;
  p.add("embed.weight", glorot<T>(config.token_input_width(), d, rng));
  p.add("embed.bias", Array<T>({d}));
  if (config.tokenizer == TokenizerKind::patch) p.add("embed.position", glorot<T>(config.patch_count(), d, rng));
  const std::size_t n = config.tokens_per_group();
  for (std::size_t l = 0; l < config.layers; ++l) {
    p.add(layer_name(l, "norm1.gamma"), Array<T>({d}, T(1)));
    p.add(layer_name(l, "norm1.beta"), Array<T>({d}));
    for (const char* proj : {"wq", "wk", "wv", "wo"}) {
      p.add(layer_name(l, std::string("attn.") + proj), glorot<T>(d, d, rng));
      p.add(layer_name(l, std::string("attn.b") + proj[1]), Array<T>({d}));
    }
    if (config.learnable_mask) p.add(layer_name(l, "attn.mask"), Array<T>({n, n}));
    p.add(layer_name(l, "norm2.gamma"), Array<T>({d}, T(1)));
    p.add(layer_name(l, "norm2.beta"), Array<T>({d}));
    p.add(layer_name(l, "ffn.w1"), glorot<T>(d, config.ffn_hidden, rng));
    p.add(layer_name(l, "ffn.b1"), Array<T>({config.ffn_hidden}));
    p.add(layer_name(l, "ffn.w2"), glorot<T>(config.ffn_hidden, d, rng));
    p.add(layer_name(l, "ffn.b2"), Array<T>({d}));
  }
  p.add("final_norm.gamma", Array<T>({d}, T(1)));
  p.add("final_norm.beta", Array<T>({d}));
  p.add("head.weight", glorot<T>(config.head_input_width(), config.horizon, rng));
  p.add("head.bias", Array<T>({config.horizon}));
  return p;
}

template <typename T>
Batch<T> make_batch(std::span<const data::WindowPair* const> windows) {
  if (windows.empty()) throw InvalidArgument("make_batch: no windows");
  const std::size_t lookback = windows[0]->x.dim(0), n = windows[0]->x.dim(1), horizon = windows[0]->y.dim(0);
  const std::size_t b = windows.size();
  Array<T> x({b, lookback, n});
  Array<T> y({b * n, horizon});
  for (std::size_t i = 0; i < b; ++i) {
    const data::WindowPair& w = *windows[i];
    if (w.x.dims() != Dims{lookback, n} || w.y.dims() != Dims{horizon, n}) {
      throw InvalidArgument("make_batch: windows have inconsistent shapes");
    }
    for (std::size_t k = 0; k < lookback * n; ++k) x[i * lookback * n + k] = static_cast<T>(w.x[k]);
    for (std::size_t s = 0; s < horizon; ++s) {
      for (std::size_t j = 0; j < n; ++j) y.at(i * n + j, s) = static_cast<T>(w.y.at(s, j));
    }
  }
  return {std::move(x), std::move(y)};
}

template <typename T>
Batch<T> make_batch(std::span<const data::WindowPair> windows) {
  std::vector<const data::WindowPair*> ptrs;
  ptrs.reserve(windows.size());
  for (const auto& w : windows) ptrs.push_back(&w);
  return make_batch<T>(std::span<const data::WindowPair* const>(ptrs));
}

template <typename T>
Array<T> to_time_major(const Array<T>& token_major, std::size_t batch, std::size_t variables) {
  const std::size_t horizon = token_major.dim(1);
  if (token_major.dim(0) != batch * variables) throw InvalidArgument("to_time_major: row count mismatch");
  Array<T> out({batch, horizon, variables});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < variables; ++j) {
      for (std::size_t s = 0; s < horizon; ++s) out.at(b, s, j) = token_major.at(b * variables + j, s);
    }
  }
  return out;
}

template <typename T>
Array<T> token_inputs(const ModelConfig& config, const Array<T>& x) {
  if (x.rank() != 3 || x.dim(1) != config.lookback || x.dim(2) != config.variables) {
    throw InvalidArgument("tokenize: input " + dims_to_string(x.dims()) + " does not match (B x " +
                          std::to_string(config.lookback) + " x " + std::to_string(config.variables) + ")");
  }
  const std::size_t b = x.dim(0), len = config.lookback, n = config.variables;
  if (config.tokenizer == TokenizerKind::inverted) {
    Array<T> rows({b * n, len});
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t j = 0; j < n; ++j) rows.at(i * n + j, t) = x.at(i, t, j);
      }
    }
    return rows;
  }
  const std::size_t patches = config.patch_count(), width = config.patch_len;
  Array<T> rows({b * n * patches, width});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < patches; ++p) {
        const std::size_t row = (i * n + j) * patches + p;
        for (std::size_t k = 0; k < width; ++k) rows.at(row, k) = x.at(i, p * config.stride + k, j);
      }
    }
  }
  return rows;
}

template <typename T, typename P>
Var tokenize(Tape<T>& tape, const ModelConfig& config, P& params, const Array<T>& x) {
  const Var inputs = tape.constant(token_inputs(config, x));
  Var tokens = linear(tape, inputs, tape.leaf(params["embed.weight"]), tape.leaf(params["embed.bias"]));
  if (config.tokenizer == TokenizerKind::patch) tokens = add_tiled(tape, tokens, tape.leaf(params["embed.position"]));
  return tokens;
}

template <typename T, typename P>
AttentionOutput self_attention(Tape<T>& tape, const ModelConfig& config, P& params, std::size_t layer, Var tokens,
                               std::size_t groups, const std::optional<AblationDirective>& ablation) {
  const auto bind = [&](std::string_view leaf) { return tape.leaf(params[layer_name(layer, leaf)]); };
  const Var q = linear(tape, tokens, bind("attn.wq"), bind("attn.bq"));
  const Var k = linear(tape, tokens, bind("attn.wk"), bind("attn.bk"));
  const Var v = linear(tape, tokens, bind("attn.wv"), bind("attn.bv"));
  const std::size_t heads = config.heads;
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(config.d_model / heads));

  AttentionOutput out;
  out.scores = attention_scores(tape, q, k, groups, heads, inv_sqrt_dk);
  out.maps = softmax_rows(tape, out.scores);
  Var used = out.maps;
  if (config.learnable_mask) {
    out.gate = sigmoid(tape, bind("attn.mask"));
    used = modulate_maps(tape, used, out.gate);
  }
  if (ablation && ablation->layer == layer) {
    const Array<T>& maps = tape.value(used);
    const std::size_t n = maps.dim(1);
    if (ablation->p >= n || ablation->q >= n) {
      throw InvalidArgument("ablation entry (" + std::to_string(ablation->p) + ", " + std::to_string(ablation->q) +
                            ") outside a " + std::to_string(n) + "-token map");
    }
    const std::size_t per_sample = config.groups_per_sample();
    if (ablation->variable && (config.tokenizer != TokenizerKind::patch || *ablation->variable >= per_sample)) {
      throw InvalidArgument("ablation variable filter needs the patch tokenizer and an index < " +
                            std::to_string(per_sample));
    }
    Array<T> keep(maps.dims(), T(1));
    for (std::size_t g = 0; g < groups; ++g) {
      if (ablation->variable && g % per_sample != *ablation->variable) continue;
      for (std::size_t h = 0; h < heads; ++h) keep.at(g * heads + h, ablation->p, ablation->q) = T(0);
    }
    used = mul(tape, used, tape.constant(std::move(keep)));
  }
  out.context = attention_context(tape, used, v, groups, heads);
  out.output = linear(tape, out.context, bind("attn.wo"), bind("attn.bo"));
  return out;
}

template <typename T, typename P>
Var encoder_layer_forward(Tape<T>& tape, const ModelConfig& config, P& params, std::size_t layer, Var tokens,
                          std::size_t groups, const std::optional<AblationDirective>& ablation, LayerVars& record) {
  const auto bind = [&](std::string_view leaf) { return tape.leaf(params[layer_name(layer, leaf)]); };
  const Var h1 = layer_norm(tape, tokens, bind("norm1.gamma"), bind("norm1.beta"));
  const AttentionOutput attn = self_attention(tape, config, params, layer, h1, groups, ablation);
  record = LayerVars{attn.scores, attn.maps, attn.gate};
  const Var x1 = add(tape, tokens, attn.output);
  const Var h2 = layer_norm(tape, x1, bind("norm2.gamma"), bind("norm2.beta"));
  const Var hidden = activation(tape, linear(tape, h2, bind("ffn.w1"), bind("ffn.b1")), config.activation);
  return add(tape, x1, linear(tape, hidden, bind("ffn.w2"), bind("ffn.b2")));
}

namespace {

template <typename T, typename P>
ForwardVars forward_impl(Tape<T>& tape, const ModelConfig& config, P& params, const Array<T>& x,
                         const ForwardOptions& options) {
  if (options.ablation && options.ablation->layer >= config.layers) {
    throw InvalidArgument("ablation layer " + std::to_string(options.ablation->layer) + " >= layers " +
                          std::to_string(config.layers));
  }
  if (options.ablate_dim && *options.ablate_dim >= config.d_model) {
    throw InvalidArgument("dimension ablation " + std::to_string(*options.ablate_dim) + " >= d_model " +
                          std::to_string(config.d_model));
  }
  const std::size_t batch = x.dim(0), n_vars = config.variables;

  // Optional per-window standardization; stats are constants per (sample, variable).
  const Array<T>* input = &x;
  Array<T> standardized;
  Array<T> row_scale, row_shift;
  if (config.instance_norm) {
    const std::size_t len = config.lookback;
    standardized = x;
    row_scale = Array<T>({batch * n_vars});
    row_shift = Array<T>({batch * n_vars});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < n_vars; ++j) {
        T mu{0};
        for (std::size_t t = 0; t < len; ++t) mu += x.at(b, t, j);
        mu /= T(len);
        T var{0};
        for (std::size_t t = 0; t < len; ++t) var += (x.at(b, t, j) - mu) * (x.at(b, t, j) - mu);
        const T sd = std::sqrt(var / T(len) + T(1e-5));
        for (std::size_t t = 0; t < len; ++t) standardized.at(b, t, j) = (x.at(b, t, j) - mu) / sd;
        row_scale[b * n_vars + j] = sd;
        row_shift[b * n_vars + j] = mu;
      }
    }
    input = &standardized;
  }

  ForwardVars out;
  out.batch = batch;
  out.groups = batch * config.groups_per_sample();
  out.heads = config.heads;
  out.tokens = config.tokens_per_group();
  out.layers.resize(config.layers);

  Var tokens = tokenize(tape, config, params, *input);
  for (std::size_t l = 0; l < config.layers; ++l) {
    tokens = encoder_layer_forward(tape, config, params, l, tokens, out.groups, options.ablation, out.layers[l]);
  }
  tokens = layer_norm(tape, tokens, tape.leaf(params["final_norm.gamma"]), tape.leaf(params["final_norm.beta"]));
  if (options.ablate_dim) {
    Array<T> keep(tape.value(tokens).dims(), T(1));
    for (std::size_t r = 0; r < keep.dim(0); ++r) keep.at(r, *options.ablate_dim) = T(0);
    tokens = mul(tape, tokens, tape.constant(std::move(keep)));
  }
  out.final_tokens = tokens;

  Var head_in = tokens;
  if (config.tokenizer == TokenizerKind::patch) head_in = reshape(tape, tokens, {batch * n_vars, config.head_input_width()});
  Var pred = linear(tape, head_in, tape.leaf(params["head.weight"]), tape.leaf(params["head.bias"]));
  if (config.instance_norm) pred = affine_rows(tape, pred, row_scale, row_shift);
  out.prediction = pred;
  return out;
}

}  // namespace

template <typename T>
ForwardVars forward(Tape<T>& tape, const ModelConfig& config, ModelParams<T>& params, const Array<T>& x,
                    const ForwardOptions& options) {
  return forward_impl(tape, config, params, x, options);
}

template <typename T>
ForwardVars forward(Tape<T>& tape, const ModelConfig& config, const ModelParams<T>& params, const Array<T>& x,
                    const ForwardOptions& options) {
  return forward_impl(tape, config, params, x, options);
}

template <typename T>
ForwardTrace capture_trace(const Tape<T>& tape, const ForwardVars& vars) {
  ForwardTrace trace;
  trace.samples = vars.batch;
  for (std::size_t l = 0; l < vars.layers.size(); ++l) {
    trace.records.push_back(AttentionRecord{l, vars.heads, alr::cast<float>(tape.value(vars.layers[l].scores)),
                                            alr::cast<float>(tape.value(vars.layers[l].maps))});
  }
  trace.final_tokens = alr::cast<float>(tape.value(vars.final_tokens));
  return trace;
}

template <typename T>
Prediction predict(const ModelConfig& config, const ModelParams<T>& params, const Array<T>& x,
                   const ForwardOptions& options) {
  Tape<T> tape(false);
  const ForwardVars vars = forward(tape, config, params, x, options);
  return Prediction{alr::cast<float>(to_time_major(tape.value(vars.prediction), vars.batch, config.variables)),
                    capture_trace(tape, vars)};
}

#define ALR_INSTANTIATE_MODEL_P(T, P)                                                                              \
  template Var tokenize<T, P>(Tape<T>&, const ModelConfig&, P&, const Array<T>&);                                  \
  template AttentionOutput self_attention<T, P>(Tape<T>&, const ModelConfig&, P&, std::size_t, Var, std::size_t,   \
                                                const std::optional<AblationDirective>&);                          \
  template Var encoder_layer_forward<T, P>(Tape<T>&, const ModelConfig&, P&, std::size_t, Var, std::size_t,        \
                                           const std::optional<AblationDirective>&, LayerVars&);

#define ALR_INSTANTIATE_MODEL(T)                                                                                   \
  template class ModelParams<T>;                                                                                   \
  template ModelParams<T> init_params<T>(const ModelConfig&, Rng&);                                                \
  template Batch<T> make_batch<T>(std::span<const data::WindowPair>);                                              \
  template Batch<T> make_batch<T>(std::span<const data::WindowPair* const>);                                       \
  template Array<T> to_time_major<T>(const Array<T>&, std::size_t, std::size_t);                                   \
  template Array<T> token_inputs<T>(const ModelConfig&, const Array<T>&);                                          \
  ALR_INSTANTIATE_MODEL_P(T, ModelParams<T>)                                                                       \
  ALR_INSTANTIATE_MODEL_P(T, const ModelParams<T>)                                                                 \
  template ForwardVars forward<T>(Tape<T>&, const ModelConfig&, ModelParams<T>&, const Array<T>&,                  \
                                  const ForwardOptions&);                                                          \
  template ForwardVars forward<T>(Tape<T>&, const ModelConfig&, const ModelParams<T>&, const Array<T>&,            \
                                  const ForwardOptions&);                                                          \
  template ForwardTrace capture_trace<T>(const Tape<T>&, const ForwardVars&);                                      \
  template Prediction predict<T>(const ModelConfig&, const ModelParams<T>&, const Array<T>&, const ForwardOptions&);

ALR_INSTANTIATE_MODEL(float)
ALR_INSTANTIATE_MODEL(double)

}  // namespace alr::model
