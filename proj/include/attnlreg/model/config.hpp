#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <json.hpp>

#include "attnlreg/numerics/ops.hpp"

namespace alr::model {

enum class TokenizerKind { inverted, patch };

TokenizerKind parse_tokenizer(std::string_view name);
std::string_view to_string(TokenizerKind kind);

struct ModelConfig {
  TokenizerKind tokenizer = TokenizerKind::inverted;
  std::size_t patch_len = 16;
  std::size_t stride = 8;
  std::size_t layers = 2;
  std::size_t d_model = 32;
  std::size_t heads = 1;
  std::size_t ffn_hidden = 64;
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t variables = 1;
  ActivationKind activation = ActivationKind::relu;
  // Gate every normalized map with sigmoid(M) for a learnable M (n x n).
  bool learnable_mask = false;
  // Kept at 0; there is no dropout path in the forward pass.
  double dropout = 0.0;
  // Per-window, per-variable standardization of the lookback with the
  // statistics added back onto the forecast.
  bool instance_norm = false;

  void validate() const;

  std::size_t patch_count() const;
  // Tokens that attend to each other (one attention map side).
  std::size_t tokens_per_group() const;
  // Attention groups per sample: 1 for inverted, N for channel-independent patches.
  std::size_t groups_per_sample() const;
  // All tokens of one sample.
  std::size_t token_count() const { return tokens_per_group() * groups_per_sample(); }
  std::size_t token_input_width() const;
  std::size_t head_input_width() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace alr::model
