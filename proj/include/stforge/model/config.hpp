#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace stforge {

enum class AttentionMode { kSoftmax, kSigmoid };

std::string to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& name);

struct ModelConfig {
  std::int64_t feat_dim = 40;
  std::int64_t dense1 = 256;
  std::int64_t dense2 = 128;
  std::int64_t conv_channels = 16;
  std::int64_t enc_hidden = 256;  ///< per direction
  std::int64_t enc_layers = 3;
  std::int64_t char_emb_dim = 128;
  std::int64_t dec_hidden = 512;
  std::int64_t deep_output_dim = 512;
  AttentionMode attention_mode = AttentionMode::kSoftmax;
  bool weight_norm = true;
  double dropout = 0.2;

  /// Width of the flattened conv output: conv_channels · ceil(ceil(dense2/2)/2).
  std::int64_t conv_flat_width() const;
  std::int64_t enc_state_dim() const { return 2 * enc_hidden; }

  void validate() const;

  nlohmann::ordered_json to_json() const;
  /// Missing keys take defaults; unknown keys throw.
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

/// Encoder output length for n input frames after two stride-2 convolutions.
std::int64_t reduced_length(std::int64_t n);

}  // namespace stforge
