#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnlreg/data/series.hpp"
#include "attnlreg/model/config.hpp"
#include "attnlreg/numerics/rng.hpp"
#include "attnlreg/numerics/tape.hpp"

namespace alr::model {

/// Every learnable array of a model, in a fixed creation order. Names follow
/// "embed.weight", "layers.0.attn.wq", "head.bias", ...
template <typename T>
class ModelParams {
 public:
  ModelParams() = default;

  Parameter<T>& add(std::string name, Array<T> value);

  Parameter<T>& operator[](std::string_view name);
  const Parameter<T>& operator[](std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Parameter<T>>& all() noexcept { return params_; }
  const std::vector<Parameter<T>>& all() const noexcept { return params_; }
  std::vector<Parameter<T>*> pointers();

  void zero_grad();
  std::size_t scalar_count() const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& p : params_) out.add(p.name, alr::cast<U>(p.value));
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
};

/// Glorot-uniform weights (a = sqrt(6 / (fan_in + fan_out))), zero biases and
/// layer-norm beta, unit layer-norm gamma. Deterministic in the Rng seed.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, Rng& rng);

/// Zero the post-softmax entry (p, q) of every head at one layer. No
/// renormalization. With the patch tokenizer `variable` limits the edit to
/// that variable's map; otherwise every map of the layer is edited.
struct AblationDirective {
  std::size_t layer = 0;
  std::size_t p = 0;
  std::size_t q = 0;
  std::optional<std::size_t> variable;
};

struct ForwardOptions {
  std::optional<AblationDirective> ablation;
  // Zero this dimension of every final token before decoding.
  std::optional<std::size_t> ablate_dim;
};

struct LayerVars {
  Var scores;  // raw scaled dot products, (maps x n x n)
  Var maps;    // row-softmax of scores, before gating/ablation
  Var gate;    // sigmoid(mask) when the learnable mask is on
};

struct ForwardVars {
  Var prediction;  // token-major (B*N x S)
  Var final_tokens;
  std::vector<LayerVars> layers;
  std::size_t batch = 0;
  std::size_t groups = 0;  // attention groups across the batch
  std::size_t heads = 0;
  std::size_t tokens = 0;  // per group
};

/// Stacks windows into a (B x T x N) input and a token-major (B*N x S) target.
template <typename T>
struct Batch {
  Array<T> x;
  Array<T> y;
  std::size_t size() const { return x.dim(0); }
};

template <typename T>
Batch<T> make_batch(std::span<const data::WindowPair> windows);
template <typename T>
Batch<T> make_batch(std::span<const data::WindowPair* const> windows);

/// (B*N x S) token-major rows back to (B x S x N).
template <typename T>
Array<T> to_time_major(const Array<T>& token_major, std::size_t batch, std::size_t variables);

/// Token matrix for a (B x T x N) input: (B*N x T) rows for the inverted
/// tokenizer, (B*N*P x patch_len) rows for patches. Constant w.r.t. params.
template <typename T>
Array<T> token_inputs(const ModelConfig& config, const Array<T>& x);

struct AttentionOutput {
  Var scores;
  Var maps;
  Var gate;
  Var context;
  Var output;
};

/// Multi-head self-attention on already-normalized tokens of one layer.
template <typename T, typename P>
AttentionOutput self_attention(Tape<T>& tape, const ModelConfig& config, P& params, std::size_t layer, Var tokens,
                               std::size_t groups, const std::optional<AblationDirective>& ablation);

/// Embedding of the (B x T x N) input into (groups*n x D) tokens.
template <typename T, typename P>
Var tokenize(Tape<T>& tape, const ModelConfig& config, P& params, const Array<T>& x);

/// Pre-norm residual block: x + Attn(LN(x)), then + FFN(LN(.)).
template <typename T, typename P>
Var encoder_layer_forward(Tape<T>& tape, const ModelConfig& config, P& params, std::size_t layer, Var tokens,
                          std::size_t groups, const std::optional<AblationDirective>& ablation, LayerVars& record);

/// tokenize -> encoder layers -> final layer norm -> linear decoder head.
/// Binding non-const params records gradients; const params is inference.
template <typename T>
ForwardVars forward(Tape<T>& tape, const ModelConfig& config, ModelParams<T>& params, const Array<T>& x,
                    const ForwardOptions& options = {});
template <typename T>
ForwardVars forward(Tape<T>& tape, const ModelConfig& config, const ModelParams<T>& params, const Array<T>& x,
                    const ForwardOptions& options = {});

struct AttentionRecord {
  std::size_t layer = 0;
  std::size_t heads = 0;
  Array<float> scores;  // (maps x n x n), map = group * heads + head
  Array<float> maps;    // normalized, as used by the layer before ablation
};

struct ForwardTrace {
  std::size_t samples = 0;
  std::vector<AttentionRecord> records;
  Array<float> final_tokens;  // (groups*n x D)
};

template <typename T>
ForwardTrace capture_trace(const Tape<T>& tape, const ForwardVars& vars);

/// Convenience inference: (B x S x N) predictions plus the trace.
struct Prediction {
  Array<float> values;
  ForwardTrace trace;
};

template <typename T>
Prediction predict(const ModelConfig& config, const ModelParams<T>& params, const Array<T>& x,
                   const ForwardOptions& options = {});

}  // namespace alr::model
