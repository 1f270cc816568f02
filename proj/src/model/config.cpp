#include "stforge/model/config.hpp"

#include <stdexcept>

#include "stforge/util/json_fields.hpp"

namespace stforge {

std::string to_string(AttentionMode mode) {
  return mode == AttentionMode::kSoftmax ? "softmax" : "sigmoid";
}

AttentionMode attention_mode_from_string(const std::string& name) {
  if (name == "softmax") return AttentionMode::kSoftmax;
  if (name == "sigmoid") return AttentionMode::kSigmoid;
  throw util::ConfigError("model.attention_mode: expected softmax or sigmoid, got '" + name + "'");
}

std::int64_t reduced_length(std::int64_t n) {
  const auto half = (n + 1) / 2;
  return (half + 1) / 2;
}

std::int64_t ModelConfig::conv_flat_width() const {
  return conv_channels * reduced_length(dense2);
}

void ModelConfig::validate() const {
  auto positive = [](std::int64_t v, const char* name) {
    if (v <= 0) {
      throw util::ConfigError(std::string("model.") + name + " must be positive, got " + std::to_string(v));
    }
  };
  positive(feat_dim, "feat_dim");
  positive(dense1, "dense1");
  positive(dense2, "dense2");
  positive(conv_channels, "conv_channels");
  positive(enc_hidden, "enc_hidden");
  positive(enc_layers, "enc_layers");
  positive(char_emb_dim, "char_emb_dim");
  positive(dec_hidden, "dec_hidden");
  positive(deep_output_dim, "deep_output_dim");
  if (!(dropout >= 0.0) || dropout >= 1.0) {
    throw util::ConfigError("model.dropout must lie in [0, 1), got " + std::to_string(dropout));
  }
}

nlohmann::ordered_json ModelConfig::to_json() const {
  return nlohmann::ordered_json{{"feat_dim", feat_dim},
                                {"dense1", dense1},
                                {"dense2", dense2},
                                {"conv_channels", conv_channels},
                                {"enc_hidden", enc_hidden},
                                {"enc_layers", enc_layers},
                                {"char_emb_dim", char_emb_dim},
                                {"dec_hidden", dec_hidden},
                                {"deep_output_dim", deep_output_dim},
                                {"attention_mode", to_string(attention_mode)},
                                {"weight_norm", weight_norm},
                                {"dropout", dropout}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  const std::string where = "model";
  util::require_known_keys(j,
                           {"feat_dim", "dense1", "dense2", "conv_channels", "enc_hidden", "enc_layers",
                            "char_emb_dim", "dec_hidden", "deep_output_dim", "attention_mode", "weight_norm",
                            "dropout"},
                           where);
  ModelConfig c;
  util::read_field(j, "feat_dim", c.feat_dim, where);
  util::read_field(j, "dense1", c.dense1, where);
  util::read_field(j, "dense2", c.dense2, where);
  util::read_field(j, "conv_channels", c.conv_channels, where);
  util::read_field(j, "enc_hidden", c.enc_hidden, where);
  util::read_field(j, "enc_layers", c.enc_layers, where);
  util::read_field(j, "char_emb_dim", c.char_emb_dim, where);
  util::read_field(j, "dec_hidden", c.dec_hidden, where);
  util::read_field(j, "deep_output_dim", c.deep_output_dim, where);
  std::string mode = to_string(c.attention_mode);
  util::read_field(j, "attention_mode", mode, where);
  c.attention_mode = attention_mode_from_string(mode);
  util::read_field(j, "weight_norm", c.weight_norm, where);
  util::read_field(j, "dropout", c.dropout, where);
  c.validate();
  return c;
}

}  // namespace stforge
