#include "attnlreg/model/config.hpp"

#include <string>

namespace alr::model {

TokenizerKind parse_tokenizer(std::string_view name) {
  if (name == "inverted") return TokenizerKind::inverted;
  if (name == "patch") return TokenizerKind::patch;
  throw InvalidArgument("model.tokenizer: unknown tokenizer '" + std::string(name) + "' (expected inverted or patch)");
}

std::string_view to_string(TokenizerKind kind) { return kind == TokenizerKind::inverted ? "inverted" : "patch"; }

void ModelConfig::validate() const {
  const auto fail = [](const std::string& field, const std::string& why) {
    throw InvalidArgument("model." + field + ": " + why);
  };
  if (layers < 1) fail("layers", "must be >= 1");
  if (d_model < 1) fail("d_model", "must be >= 1");
  if (heads < 1) fail("heads", "must be >= 1");
  if (d_model % heads != 0) fail("heads", "d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads));
  if (ffn_hidden < 1) fail("ffn_hidden", "must be >= 1");
  if (lookback < 1) fail("lookback", "must be >= 1");
  if (horizon < 1) fail("horizon", "must be >= 1");
  if (variables < 1) fail("variables", "must be >= 1");
  if (dropout != 0.0) fail("dropout", "only 0 is supported");
  if (tokenizer == TokenizerKind::patch) {
    if (patch_len < 1 || patch_len > lookback) fail("patch_len", "must be in [1, lookback]");
    if (stride < 1) fail("stride", "must be >= 1");
  }
}

std::size_t ModelConfig::patch_count() const {
  return tokenizer == TokenizerKind::patch ? (lookback - patch_len) / stride + 1 : 1;
}

std::size_t ModelConfig::tokens_per_group() const {
  return tokenizer == TokenizerKind::inverted ? variables : patch_count();
}

std::size_t ModelConfig::groups_per_sample() const {
  return tokenizer == TokenizerKind::inverted ? 1 : variables;
}

std::size_t ModelConfig::token_input_width() const {
  return tokenizer == TokenizerKind::inverted ? lookback : patch_len;
}

std::size_t ModelConfig::head_input_width() const {
  return tokenizer == TokenizerKind::inverted ? d_model : d_model * patch_count();
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j{{"tokenizer", to_string(c.tokenizer)},
                   {"layers", c.layers},
                   {"d_model", c.d_model},
                   {"heads", c.heads},
                   {"ffn_hidden", c.ffn_hidden},
                   {"lookback", c.lookback},
                   {"horizon", c.horizon},
                   {"variables", c.variables},
                   {"activation", to_string(c.activation)},
                   {"learnable_mask", c.learnable_mask},
                   {"dropout", c.dropout},
                   {"instance_norm", c.instance_norm}};
  if (c.tokenizer == TokenizerKind::patch) {
    j["patch_len"] = c.patch_len;
    j["stride"] = c.stride;
  }
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("model: expected a JSON object");
  ModelConfig c;
  const auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw InvalidArgument(std::string("model.") + key + ": wrong type");
    }
  };
  if (j.contains("tokenizer")) c.tokenizer = parse_tokenizer(j.at("tokenizer").get<std::string>());
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  read("patch_len", c.patch_len);
  read("stride", c.stride);
  read("layers", c.layers);
  read("d_model", c.d_model);
  read("heads", c.heads);
  read("ffn_hidden", c.ffn_hidden);
  read("lookback", c.lookback);
  read("horizon", c.horizon);
  read("variables", c.variables);
  read("learnable_mask", c.learnable_mask);
  read("dropout", c.dropout);
  read("instance_norm", c.instance_norm);
  c.validate();
  return c;
}

}  // namespace alr::model
